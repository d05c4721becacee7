"""Decoding joint locations from score maps, and strict-PCP / PDJ metrics.

The decoder maximises

    sum_k u_k(l_k) - sum_{(p, c)} [w_x dx^2 + w_y dy^2],
    dx = x_c - x_p - x_r,  dy = y_c - y_p - y_r

over all placements on the score-map grid. ``tree_dp`` does max-sum with
explicit (n x n) edge tables; ``gdt`` gets the same messages from separable
1-D lower-envelope distance transforms. Ties always go to the smallest
row-major index.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .structured import JointTree

DEFAULT_WEIGHTS = (0.01, 0.01)


@dataclass
class ScoreMapSet:
    """Raw scores (K*M + 1, h, w), background channel last."""

    scores: np.ndarray
    n_joints: int
    n_mixtures: int = 1
    downsample: int = 1

    def __post_init__(self):
        expected = self.n_joints * self.n_mixtures + 1
        if self.scores.ndim != 3 or self.scores.shape[0] != expected:
            raise ValueError(f"score maps must be ({expected}, h, w), got {self.scores.shape}")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("score maps contain non-finite values")

    def log_probs(self) -> np.ndarray:
        s = self.scores.astype(np.float64)
        m = s.max(axis=0, keepdims=True)
        return s - m - np.log(np.exp(s - m).sum(axis=0, keepdims=True))

    def joint_unary(self, normalize: bool = True) -> np.ndarray:
        """(K, h, w) unary: per-pixel log-softmax (or raw score), max over mixtures."""
        s = self.log_probs() if normalize else self.scores.astype(np.float64)
        K, M = self.n_joints, self.n_mixtures
        return s[: K * M].reshape(K, M, *s.shape[1:]).max(axis=1)


@dataclass
class PairwiseParams:
    """Per-edge mean (child - parent) offsets in score-map units, in ``tree.edges`` order."""

    offsets: np.ndarray  # (E, 2) as (x_r, y_r)
    weights: tuple[float, float] = DEFAULT_WEIGHTS

    def __post_init__(self):
        if min(self.weights) < 0:
            raise ValueError("pairwise weights must be non-negative")


@dataclass
class PoseEstimate:
    cells: np.ndarray  # (K, 2) int (col, row) on the score map
    coords: np.ndarray  # (K, 2) input pixels at cell centers
    peaks: np.ndarray  # (K,) unary at the chosen cells
    objective: float


def estimate_pairwise_params(
    joints: np.ndarray,
    tree: JointTree,
    downsample: int = 1,
    weights: tuple[float, float] = DEFAULT_WEIGHTS,
) -> PairwiseParams:
    """Mean child-minus-parent offset per edge from (N, K, 2) training joints."""
    if len(joints) == 0:
        raise ValueError("cannot estimate pairwise parameters from an empty dataset")
    offs = np.array([(joints[:, c] - joints[:, p]).mean(axis=0) for p, c in tree.edges])
    return PairwiseParams(offs.reshape(-1, 2) / downsample, tuple(weights))


# ---------------------------------------------------------------------------
# decoding


def _edge_cost(h: int, w: int, offset, weights) -> np.ndarray:
    """(n_parent, n_child) pairwise cost table over row-major locations."""
    ys, xs = np.divmod(np.arange(h * w), w)
    dx = xs[None, :] - xs[:, None] - offset[0]
    dy = ys[None, :] - ys[:, None] - offset[1]
    return weights[0] * dx**2 + weights[1] * dy**2


def _message_brute(belief: np.ndarray, offset, weights):
    h, w = belief.shape
    table = belief.reshape(1, -1) - _edge_cost(h, w, offset, weights)
    arg = table.argmax(axis=1)
    return table[np.arange(h * w), arg].reshape(h, w), arg.reshape(h, w)


def distance_transform_1d(f: np.ndarray, weight: float, shift: float):
    """``D[j] = max_i f[i] - weight * (i - j - shift)^2`` with argmax (lowest index on ties)."""
    n = len(f)
    if weight == 0:
        i = int(np.argmax(f))
        return np.full(n, f[i]), np.full(n, i, dtype=np.int64)
    h = -np.asarray(f, dtype=np.float64) / weight  # minimise (s - i)^2 + h[i]
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = 0
    z[0], z[1] = -np.inf, np.inf
    for q in range(1, n):
        s = ((h[q] + q * q) - (h[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = ((h[q] + q * q) - (h[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    D = np.empty(n)
    A = np.empty(n, dtype=np.int64)
    k = 0
    for j in range(n):
        s = j + shift
        while z[k + 1] < s:
            k += 1
        i = v[k]
        A[j] = i
        D[j] = f[i] - weight * (s - i) ** 2
    return D, A


def _message_gdt(belief: np.ndarray, offset, weights):
    h, w = belief.shape
    g = np.empty((h, w))
    ax = np.empty((h, w), dtype=np.int64)
    for r in range(h):
        g[r], ax[r] = distance_transform_1d(belief[r], weights[0], offset[0])
    msg = np.empty((h, w))
    ay = np.empty((h, w), dtype=np.int64)
    for c in range(w):
        msg[:, c], ay[:, c] = distance_transform_1d(g[:, c], weights[1], offset[1])
    cols = np.arange(w)[None, :]
    arg = ay * w + ax[ay, np.broadcast_to(cols, (h, w))]
    return msg, arg


def objective_at(unary: np.ndarray, params: PairwiseParams, tree: JointTree, cells: np.ndarray) -> float:
    """Sum of unaries minus pairwise costs at integer (col, row) cells."""
    total = float(sum(unary[k, cells[k, 1], cells[k, 0]] for k in range(tree.K)))
    wx, wy = params.weights
    for e, (p, c) in enumerate(tree.edges):
        dx = cells[c, 0] - cells[p, 0] - params.offsets[e, 0]
        dy = cells[c, 1] - cells[p, 1] - params.offsets[e, 1]
        total -= wx * dx * dx + wy * dy * dy
    return total


def decode_unary(
    unary: np.ndarray,
    params: PairwiseParams | None,
    tree: JointTree,
    mode: str = "tree_dp",
    downsample: int = 1,
) -> PoseEstimate:
    """Decode from a (K, h, w) unary array."""
    K, h, w = unary.shape
    if K != tree.K:
        raise ValueError(f"unary has {K} joints, tree has {tree.K}")
    if params is None:
        params = PairwiseParams(np.zeros((len(tree.edges), 2)), (0.0, 0.0))
    if mode == "argmax":
        flat = unary.reshape(K, -1).argmax(axis=1)
    elif mode in ("tree_dp", "gdt"):
        message = _message_brute if mode == "tree_dp" else _message_gdt
        edge_index = {c: e for e, (_, c) in enumerate(tree.edges)}
        belief = unary.astype(np.float64).copy()
        back: dict[int, np.ndarray] = {}
        for c in tree.upward_order:
            p = tree.parent[c]
            if p < 0:
                continue
            m, arg = message(belief[c], params.offsets[edge_index[c]], params.weights)
            belief[p] += m
            back[c] = arg.reshape(-1)
        flat = np.zeros(K, dtype=np.int64)
        flat[tree.root] = int(belief[tree.root].reshape(-1).argmax())
        for c in tree.downward_order:
            p = tree.parent[c]
            if p >= 0:
                flat[c] = back[c][flat[p]]
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    rows, cols = np.divmod(flat, w)
    cells = np.stack([cols, rows], axis=1)
    peaks = unary[np.arange(K), rows, cols]
    coords = cells * downsample + (downsample - 1) / 2.0
    return PoseEstimate(cells, coords.astype(np.float64), peaks, objective_at(unary, params, tree, cells))


def decode(
    scores: ScoreMapSet,
    params: PairwiseParams | None,
    tree: JointTree,
    mode: str = "tree_dp",
    normalize: bool = True,
) -> PoseEstimate:
    return decode_unary(scores.joint_unary(normalize), params, tree, mode, scores.downsample)


# ---------------------------------------------------------------------------
# metrics


def default_limbs(tree: JointTree) -> list[tuple[str, int, int]]:
    """(group, joint_a, joint_b) limbs. Non-standard trees use every edge as one group."""
    named = [
        ("head", "neck", "head"),
        ("torso", "l_shoulder", "l_hip"),
        ("torso", "r_shoulder", "r_hip"),
        ("u.arms", "l_shoulder", "l_elbow"),
        ("u.arms", "r_shoulder", "r_elbow"),
        ("l.arms", "l_elbow", "l_wrist"),
        ("l.arms", "r_elbow", "r_wrist"),
        ("u.legs", "l_hip", "l_knee"),
        ("u.legs", "r_hip", "r_knee"),
        ("l.legs", "l_knee", "l_ankle"),
        ("l.legs", "r_knee", "r_ankle"),
    ]
    if all(a in tree.names and b in tree.names for _, a, b in named):
        return [(g, tree.index(a), tree.index(b)) for g, a, b in named]
    return [("limbs", p, c) for p, c in tree.edges]


@dataclass
class PCPResult:
    groups: dict[str, float]  # percent correct per group
    mean: float
    skipped: int = 0


def limb_correct(est: np.ndarray, gt: np.ndarray, limbs: Sequence[tuple[str, int, int]]):
    """Boolean (N, L) correctness and (N, L) validity (non-zero ground-truth length)."""
    a = np.array([l[1] for l in limbs])
    b = np.array([l[2] for l in limbs])
    length = np.linalg.norm(gt[:, a] - gt[:, b], axis=-1)
    ea = np.linalg.norm(est[:, a] - gt[:, a], axis=-1)
    eb = np.linalg.norm(est[:, b] - gt[:, b], axis=-1)
    thr = 0.5 * length
    return (ea <= thr) & (eb <= thr), length > 0


def pcp_strict(est: np.ndarray, gt: np.ndarray, limbs: Sequence[tuple[str, int, int]]) -> PCPResult:
    """Strict PCP in percent: both endpoints within half the ground-truth limb length."""
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if est.shape != gt.shape:
        raise ValueError(f"estimate shape {est.shape} != ground truth {gt.shape}")
    ok, valid = limb_correct(est, gt, limbs)
    skipped = int((~valid).sum())
    if skipped:
        warnings.warn(f"pcp_strict: skipped {skipped} zero-length ground-truth limbs")
    groups: dict[str, float] = {}
    names = [l[0] for l in limbs]
    for g in dict.fromkeys(names):
        cols = [i for i, n in enumerate(names) if n == g]
        v = valid[:, cols]
        groups[g] = 100.0 * float(ok[:, cols][v].sum()) / max(int(v.sum()), 1)
    mean = float(np.mean(list(groups.values()))) if groups else 0.0
    return PCPResult(groups, mean, skipped)


def pose_scale(gt: np.ndarray) -> np.ndarray:
    """Diagonal of the ground-truth joint bounding box, per sample."""
    span = gt.max(axis=1) - gt.min(axis=1)
    return np.linalg.norm(span, axis=-1)


def pdj_curve(est: np.ndarray, gt: np.ndarray, thresholds: Sequence[float], scale: np.ndarray | None = None) -> np.ndarray:
    """(T, K) fraction of joints with error <= t * pose scale."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be ascending")
    if scale is None:
        scale = pose_scale(gt)
    err = np.linalg.norm(np.asarray(est, np.float64) - gt, axis=-1)  # (N, K)
    return (err[None] <= thresholds[:, None, None] * scale[None, :, None]).mean(axis=1)


def pcp_csv(result: PCPResult) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["group", "pcp"])
    for g, v in result.groups.items():
        wr.writerow([g, f"{v:.4f}"])
    wr.writerow(["mean", f"{result.mean:.4f}"])
    return buf.getvalue()


def pdj_csv(curve: np.ndarray, thresholds: Sequence[float], joint_names: Sequence[str]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["threshold", "joint", "fraction"])
    for t, row in zip(thresholds, curve):
        for name, v in zip(joint_names, row):
            wr.writerow([f"{t:g}", name, f"{v:.6f}"])
    return buf.getvalue()


def estimates_csv(estimates: Sequence[PoseEstimate], joint_names: Sequence[str], ids: Sequence | None = None) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["sample_id", "joint", "x", "y", "score"])
    for i, e in enumerate(estimates):
        sid = ids[i] if ids is not None else i
        for k, name in enumerate(joint_names):
            wr.writerow([sid, name, repr(float(e.coords[k, 0])), repr(float(e.coords[k, 1])), repr(float(e.peaks[k]))])
    return buf.getvalue()

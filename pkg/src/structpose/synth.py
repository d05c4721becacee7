"""Synthetic stick-figure pose data.

Skeletons are drawn by walking the joint tree from the root and sampling an
edge length and a bend angle relative to the parent edge. Figures are
rendered as anti-aliased thick segments with a filled head disk, plus
noise and distractor strokes. Images are kept as ``uint8`` so they survive
the PGM round trip exactly.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .structured import JointTree, get_tree


class DataError(ValueError):
    """Malformed or inconsistent dataset files."""


@dataclass(frozen=True)
class EdgeSpec:
    length: tuple[float, float]
    angle: float  # relative to the parent edge direction, radians
    spread: float  # half-width of the uniform angle window


def _default_edges() -> dict[str, EdgeSpec]:
    half = math.pi / 2
    hip = math.pi - 0.3
    return {
        "head": EdgeSpec((7.0, 9.0), 0.0, 0.3),
        "l_shoulder": EdgeSpec((6.0, 8.0), half, 0.15),
        "r_shoulder": EdgeSpec((6.0, 8.0), -half, 0.15),
        "l_elbow": EdgeSpec((9.0, 12.0), half, 1.2),
        "r_elbow": EdgeSpec((9.0, 12.0), -half, 1.2),
        "l_wrist": EdgeSpec((8.0, 11.0), 0.0, 1.2),
        "r_wrist": EdgeSpec((8.0, 11.0), 0.0, 1.2),
        "l_hip": EdgeSpec((14.0, 17.0), hip, 0.1),
        "r_hip": EdgeSpec((14.0, 17.0), -hip, 0.1),
        "l_knee": EdgeSpec((9.0, 12.0), -0.3, 0.6),
        "r_knee": EdgeSpec((9.0, 12.0), 0.3, 0.6),
        "l_ankle": EdgeSpec((9.0, 12.0), 0.0, 0.6),
        "r_ankle": EdgeSpec((9.0, 12.0), 0.0, 0.6),
    }


@dataclass(frozen=True)
class SkeletonSpec:
    tree_id: str = "default14"
    canvas: int = 64
    edges: dict[str, EdgeSpec] = field(default_factory=_default_edges)
    default_edge: EdgeSpec = EdgeSpec((6.0, 9.0), 0.0, 0.6)
    root_spread: float = 0.25  # torso tilt around vertical
    margin: float = 2.0
    thickness: tuple[float, float] = (1.5, 2.5)
    head_radius: tuple[float, float] = (2.5, 3.5)
    figure_intensity: tuple[float, float] = (0.6, 1.0)
    background_intensity: tuple[float, float] = (0.0, 0.25)
    noise_sigma: float = 0.05
    distractors: tuple[int, int] = (0, 3)
    multi_figure_prob: float = 0.0
    max_tries: int = 1000

    def __post_init__(self):
        for name, e in self.edges.items():
            if not 0 < e.length[0] <= e.length[1]:
                raise ValueError(f"edge {name!r}: length range must be positive and ordered")
            if not 0 <= e.spread < math.pi:
                raise ValueError(f"edge {name!r}: angle spread must lie in [0, pi)")
        if not 0 <= self.root_spread < math.pi:
            raise ValueError("root_spread must lie in [0, pi)")

    @property
    def tree(self) -> JointTree:
        return get_tree(self.tree_id)

    def edge(self, name: str) -> EdgeSpec:
        return self.edges.get(name, self.default_edge)


@dataclass
class PoseSample:
    image: np.ndarray  # (H, W) uint8
    joints: np.ndarray  # (K, 2) float64, (x, y) in input pixels
    visible: np.ndarray  # (K,) bool
    mixtures: np.ndarray  # (K,) int


@dataclass
class LabelTensor:
    classes: np.ndarray  # (h, w) int, background = K*M
    mask: np.ndarray  # (h, w) bool


@dataclass
class PoseDataset:
    tree: JointTree
    images: np.ndarray  # (N, H, W) uint8
    joints: np.ndarray  # (N, K, 2) float64
    visible: np.ndarray  # (N, K) bool
    mixtures: np.ndarray  # (N, K) int

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int) -> PoseSample:
        return PoseSample(self.images[i], self.joints[i], self.visible[i], self.mixtures[i])

    @classmethod
    def from_samples(cls, tree: JointTree, samples: Sequence[PoseSample], canvas: int = 64) -> "PoseDataset":
        K = tree.K
        if not samples:
            return cls(
                tree,
                np.zeros((0, canvas, canvas), np.uint8),
                np.zeros((0, K, 2)),
                np.zeros((0, K), bool),
                np.zeros((0, K), np.int64),
            )
        return cls(
            tree,
            np.stack([s.image for s in samples]),
            np.stack([s.joints for s in samples]).astype(np.float64),
            np.stack([s.visible for s in samples]).astype(bool),
            np.stack([s.mixtures for s in samples]).astype(np.int64),
        )

    def subset(self, idx) -> "PoseDataset":
        return PoseDataset(self.tree, self.images[idx], self.joints[idx], self.visible[idx], self.mixtures[idx])

    def float_images(self, dtype=np.float32) -> np.ndarray:
        """(N, 1, H, W) network input in [0, 1]."""
        return (self.images[:, None].astype(dtype)) / dtype(255.0)


def sample_seed(seed: int, index: int) -> int:
    return (seed ^ index) & 0xFFFFFFFF if index else seed


# ---------------------------------------------------------------------------
# skeletons


GRID = 1024.0


def snap(coords: np.ndarray) -> np.ndarray:
    """Round to a 1/1024-pixel grid; mirroring ``(W - 1) - x`` is then exact."""
    return np.round(np.asarray(coords, dtype=np.float64) * GRID) / GRID


def _walk(spec: SkeletonSpec, tree: JointTree, rng: np.random.Generator) -> np.ndarray:
    """Joint positions relative to the root at the origin."""
    pos = np.zeros((tree.K, 2))
    direction = np.zeros(tree.K)
    root = tree.root
    direction[root] = -math.pi / 2 + rng.uniform(-spec.root_spread, spec.root_spread)
    for k in tree.downward_order:
        p = tree.parent[k]
        if p < 0:
            continue
        e = spec.edge(tree.names[k])
        length = rng.uniform(*e.length)
        angle = direction[p] + e.angle + rng.uniform(-e.spread, e.spread)
        direction[k] = angle
        pos[k] = pos[p] + length * np.array([math.cos(angle), math.sin(angle)])
    return pos


def sample_pose(spec: SkeletonSpec, rng_seed: int | np.random.Generator) -> np.ndarray:
    """Joint coordinates (K, 2) placed uniformly among in-bounds positions."""
    rng = np.random.default_rng(rng_seed)
    tree = spec.tree
    lo, hi = spec.margin, spec.canvas - 1 - spec.margin
    for _ in range(spec.max_tries):
        rel = _walk(spec, tree, rng)
        span_lo = lo - rel.min(axis=0)
        span_hi = hi - rel.max(axis=0)
        if np.all(span_lo <= span_hi):
            return np.clip(snap(rel + rng.uniform(span_lo, span_hi)), lo, hi)
    raise ValueError("rejection budget exceeded: skeleton spec does not fit the canvas")


# ---------------------------------------------------------------------------
# rendering


def _segment_coverage(h: int, w: int, a: np.ndarray, b: np.ndarray, thickness: float) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    d = b - a
    L2 = float(d @ d)
    if L2 == 0:
        t = np.zeros_like(xs)
    else:
        t = np.clip(((xs - a[0]) * d[0] + (ys - a[1]) * d[1]) / L2, 0.0, 1.0)
    dist = np.hypot(xs - (a[0] + t * d[0]), ys - (a[1] + t * d[1]))
    return np.clip(thickness / 2 + 0.5 - dist, 0.0, 1.0)


def _disk_coverage(h: int, w: int, c: np.ndarray, r: float) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return np.clip(r + 0.5 - np.hypot(xs - c[0], ys - c[1]), 0.0, 1.0)


def _draw_figure(canvas: np.ndarray, tree: JointTree, joints: np.ndarray, spec, rng) -> None:
    h, w = canvas.shape
    thick = rng.uniform(*spec.thickness)
    level = rng.uniform(*spec.figure_intensity)
    for p, c in tree.edges:
        cov = _segment_coverage(h, w, joints[p], joints[c], thick)
        np.maximum(canvas, level * cov, out=canvas)
    if "head" in tree.names:
        cov = _disk_coverage(h, w, joints[tree.index("head")], rng.uniform(*spec.head_radius))
        np.maximum(canvas, level * cov, out=canvas)


def render_image(
    spec: SkeletonSpec,
    joints: np.ndarray,
    rng: np.random.Generator,
    *,
    noise: bool = True,
    distractors: bool = True,
    second_figure: bool | None = None,
) -> np.ndarray:
    tree = spec.tree
    n = spec.canvas
    canvas = np.full((n, n), rng.uniform(*spec.background_intensity))
    if second_figure is None:
        second_figure = rng.random() < spec.multi_figure_prob
    if second_figure:
        other = _walk(spec, tree, rng)
        # put the other figure beside the primary one; canvas edges clip it
        side = rng.choice([-1.0, 1.0])
        anchor = joints[tree.root] + np.array([side * rng.uniform(18, 30), rng.uniform(-6, 6)])
        _draw_figure(canvas, tree, other + anchor, spec, rng)
    if distractors:
        for _ in range(rng.integers(spec.distractors[0], spec.distractors[1] + 1)):
            a = rng.uniform(0, n - 1, size=2)
            ang = rng.uniform(0, 2 * math.pi)
            b = a + rng.uniform(6, 14) * np.array([math.cos(ang), math.sin(ang)])
            cov = _segment_coverage(n, n, a, b, rng.uniform(*spec.thickness))
            np.maximum(canvas, rng.uniform(*spec.figure_intensity) * cov, out=canvas)
    _draw_figure(canvas, tree, joints, spec, rng)
    if noise and spec.noise_sigma > 0:
        canvas = canvas + rng.normal(0.0, spec.noise_sigma, canvas.shape)
    return np.clip(np.rint(canvas * 255.0), 0, 255).astype(np.uint8)


def generate_sample(spec: SkeletonSpec, rng_seed: int, **render_kw) -> PoseSample:
    rng = np.random.default_rng(rng_seed)
    joints = sample_pose(spec, rng)
    image = render_image(spec, joints, rng, **render_kw)
    K = len(joints)
    return PoseSample(image, joints, np.ones(K, bool), np.zeros(K, np.int64))


def generate_dataset(spec: SkeletonSpec, count: int, seed: int, **render_kw) -> PoseDataset:
    """Pure function of (spec, seed, count): sample i uses seed ``seed ^ i``."""
    samples = [generate_sample(spec, sample_seed(seed, i), **render_kw) for i in range(count)]
    return PoseDataset.from_samples(spec.tree, samples, spec.canvas)


# ---------------------------------------------------------------------------
# labels


def joint_cells(joints: np.ndarray, downsample: int, map_size: int) -> np.ndarray:
    """Score-map cell (col, row) containing each joint."""
    return np.clip(np.floor(joints / downsample), 0, map_size - 1).astype(np.int64)


def map_coords(joints: np.ndarray, downsample: int) -> np.ndarray:
    """Input-pixel coordinates expressed in score-map units (cell centers are integers)."""
    return (joints - (downsample - 1) / 2.0) / downsample


def cell_centers(cells: np.ndarray, downsample: int) -> np.ndarray:
    """Input-pixel coordinates of score-map cell centers."""
    return cells * downsample + (downsample - 1) / 2.0


def make_labels(
    joints: np.ndarray,
    mixtures: np.ndarray,
    *,
    map_size: int,
    downsample: int,
    n_mixtures: int = 1,
    radius: float = 1.0,
    visible: np.ndarray | None = None,
) -> np.ndarray:
    """Class index per score-map cell; background is ``K * n_mixtures``.

    Positive cells lie within ``radius`` cells of a joint; overlaps go to the
    nearest joint, then to the lower joint index. Accepts (K, 2) or (N, K, 2).
    """
    single = joints.ndim == 2
    J = joints[None] if single else joints
    Mx = mixtures[None] if single else mixtures
    N, K, _ = J.shape
    u = map_coords(J, downsample)  # (N, K, 2)
    grid = np.arange(map_size, dtype=np.float64)
    dx = grid[None, None, None, :] - u[:, :, 0, None, None]
    dy = grid[None, None, :, None] - u[:, :, 1, None, None]
    dist = np.hypot(dx, dy)  # (N, K, h, w)
    inside = dist <= radius
    cells = joint_cells(J, downsample, map_size)
    n_idx, k_idx = np.meshgrid(np.arange(N), np.arange(K), indexing="ij")
    inside[n_idx, k_idx, cells[..., 1], cells[..., 0]] = True
    if visible is not None:
        vis = visible[None] if single else visible
        inside &= vis[:, :, None, None]
    dist = np.where(inside, dist, np.inf)
    nearest = dist.argmin(axis=1)  # first minimum = lower joint index
    positive = inside.any(axis=1)
    cls = nearest * n_mixtures + Mx[np.arange(N)[:, None, None], nearest]
    out = np.where(positive, cls, K * n_mixtures)
    return out[0] if single else out


def render_and_label(
    sample: PoseSample,
    *,
    map_size: int,
    downsample: int,
    n_mixtures: int = 1,
    radius: float = 1.0,
) -> tuple[np.ndarray, LabelTensor]:
    """Network input (1, 1, H, W) float32 and the full-supervision label tensor."""
    image = sample.image[None, None].astype(np.float32) / np.float32(255.0)
    classes = make_labels(
        sample.joints, sample.mixtures, map_size=map_size, downsample=downsample,
        n_mixtures=n_mixtures, radius=radius, visible=sample.visible,
    )
    return image, LabelTensor(classes, np.ones_like(classes, dtype=bool))


# ---------------------------------------------------------------------------
# augmentation


def hflip(sample: PoseSample, tree: JointTree) -> PoseSample:
    """Mirror image and coordinates, swapping left/right joint identities."""
    W = sample.image.shape[1]
    perm = tree.mirror_permutation()
    joints = sample.joints[perm].copy()
    joints[:, 0] = (W - 1) - joints[:, 0]
    return PoseSample(
        sample.image[:, ::-1].copy(), joints, sample.visible[perm].copy(), sample.mixtures[perm].copy()
    )


def rotate(sample: PoseSample, theta: float) -> PoseSample:
    """Rotate about the canvas center (counter-clockwise on screen for theta > 0).

    Uses bilinear resampling for the image; joints that leave the canvas are
    marked invisible.
    """
    H, W = sample.image.shape
    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
    c, s = math.cos(theta), math.sin(theta)
    # screen coords have y down: counter-clockwise is (x, y) -> (c x + s y, -s x + c y)
    dx = sample.joints[:, 0] - cx
    dy = sample.joints[:, 1] - cy
    joints = snap(np.stack([cx + c * dx + s * dy, cy - s * dx + c * dy], axis=1))
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    # inverse map: output pixel -> source location
    ox, oy = xs - cx, ys - cy
    sx = cx + c * ox - s * oy
    sy = cy + s * ox + c * oy
    img = _bilinear(sample.image.astype(np.float64), sx, sy)
    inside = (joints[:, 0] >= 0) & (joints[:, 0] <= W - 1) & (joints[:, 1] >= 0) & (joints[:, 1] <= H - 1)
    return PoseSample(
        np.clip(np.rint(img), 0, 255).astype(np.uint8), joints, sample.visible & inside, sample.mixtures.copy()
    )


def _bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    H, W = img.shape
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx, fy = sx - x0, sy - y0
    out = np.zeros_like(sx)
    for oy, wy in ((0, 1 - fy), (1, fy)):
        for ox, wx in ((0, 1 - fx), (1, fx)):
            yy, xx = y0 + oy, x0 + ox
            ok = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
            vals = np.where(ok, img[np.clip(yy, 0, H - 1), np.clip(xx, 0, W - 1)], 0.0)
            out += wy * wx * vals
    return out


def augment(sample: PoseSample, op: str, tree: JointTree, theta: float = 0.0) -> PoseSample:
    if op == "hflip":
        return hflip(sample, tree)
    if op == "rotate":
        return rotate(sample, theta)
    raise ValueError(f"unknown augmentation {op!r}")


# ---------------------------------------------------------------------------
# appearance mixtures


@dataclass
class MixtureModel:
    centroids: list[np.ndarray]  # per joint, (k, 2)

    def assign(self, dataset: PoseDataset) -> np.ndarray:
        feats = relative_positions(dataset.joints, dataset.tree)
        out = np.zeros(feats.shape[:2], np.int64)
        for j, cents in enumerate(self.centroids):
            d = ((feats[:, j, None, :] - cents[None]) ** 2).sum(-1)
            out[:, j] = d.argmin(axis=1)
        return out


def relative_positions(joints: np.ndarray, tree: JointTree) -> np.ndarray:
    """Offset of each joint from its parent, divided by the head-neck distance.

    The root has no parent; it uses the negated mean offset of its children.
    """
    N, K, _ = joints.shape
    rel = np.zeros((N, K, 2))
    for c in range(K):
        p = tree.parent[c]
        if p >= 0:
            rel[:, c] = joints[:, c] - joints[:, p]
    kids = tree.children(tree.root)
    if kids:
        rel[:, tree.root] = -rel[:, kids].mean(axis=1)
    if "head" in tree.names and "neck" in tree.names:
        scale = np.linalg.norm(joints[:, tree.index("head")] - joints[:, tree.index("neck")], axis=1)
    else:
        scale = np.ones(N)
    scale = np.where(scale > 0, scale, 1.0)
    return rel / scale[:, None, None]


def kmeans(points: np.ndarray, k: int, rng_seed: int = 0, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding. Returns (centroids, labels)."""
    if len(points) == 0:
        raise ValueError("kmeans on an empty point set")
    if k < 1:
        raise ValueError("k must be at least 1")
    distinct = np.unique(points, axis=0)
    if k > len(distinct):
        raise ValueError(f"k={k} exceeds the {len(distinct)} distinct points")
    rng = np.random.default_rng(rng_seed)
    cents = [distinct[rng.integers(len(distinct))]]
    for _ in range(1, k):
        d = np.min(((distinct[:, None] - np.array(cents)[None]) ** 2).sum(-1), axis=1)
        cents.append(distinct[rng.choice(len(distinct), p=d / d.sum())])
    cents = np.array(cents, dtype=np.float64)
    labels = None
    for _ in range(max_iter):
        d = ((points[:, None] - cents[None]) ** 2).sum(-1)
        new = d.argmin(axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = points[labels == c]
            if len(members):
                cents[c] = members.mean(axis=0)
    d = ((points[:, None] - cents[None]) ** 2).sum(-1)
    return cents, d.argmin(axis=1)


def cluster_mixtures(dataset: PoseDataset, k: int, rng_seed: int = 0, max_iter: int = 100):
    """Per-joint k-means over normalized parent offsets; returns (model, labels)."""
    if len(dataset) == 0:
        raise ValueError("cannot cluster an empty dataset")
    feats = relative_positions(dataset.joints, dataset.tree)
    cents = []
    for j in range(dataset.tree.K):
        c, _ = kmeans(feats[:, j], k, rng_seed + j, max_iter)
        cents.append(c)
    model = MixtureModel(cents)
    return model, model.assign(dataset)


# ---------------------------------------------------------------------------
# dataset files


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError("PGM export expects a 2-d uint8 array")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image).tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval}")
    pos += 1
    raw = data[pos : pos + w * h]
    if len(raw) != w * h:
        raise DataError(f"{path}: truncated pixel data")
    return np.frombuffer(raw, np.uint8).reshape(h, w).copy()


ANNOTATION_FIELDS = ["sample_id", "joint_name", "x", "y", "visible", "mixture_type"]


def write_dataset(dataset: PoseDataset, path: str | os.PathLike) -> Path:
    """Write ``images/*.pgm``, ``annotations.csv`` and ``manifest.txt`` under ``path``."""
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    names = dataset.tree.names
    K = len(names)
    rows, manifest = [], []
    for i in range(len(dataset)):
        rel = f"images/{i:06d}.pgm"
        write_pgm(root / rel, dataset.images[i])
        start = len(rows)
        for k in range(K):
            rows.append([
                i, names[k], repr(float(dataset.joints[i, k, 0])), repr(float(dataset.joints[i, k, 1])),
                int(dataset.visible[i, k]), int(dataset.mixtures[i, k]),
            ])
        manifest.append(f"{rel},{start},{len(rows)}")
    _atomic_write_text(root / "annotations.csv", _csv_text([ANNOTATION_FIELDS] + rows))
    _atomic_write_text(root / "manifest.txt", "\n".join(manifest) + ("\n" if manifest else ""))
    return root


def read_dataset(path: str | os.PathLike, tree: JointTree) -> PoseDataset:
    root = Path(path)
    manifest_path = root / "manifest.txt"
    if not manifest_path.exists():
        raise DataError(f"missing manifest {manifest_path}")
    ann_path = root / "annotations.csv"
    if not ann_path.exists():
        raise DataError(f"missing annotations {ann_path}")
    with open(ann_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ANNOTATION_FIELDS:
            raise DataError(f"unexpected annotation header {header}")
        rows = list(reader)
    index = {n: k for k, n in enumerate(tree.names)}
    samples = []
    for line_no, line in enumerate(manifest_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"manifest line {line_no}: expected 'image,start,end'")
        try:
            rel, start, end = parts[0], int(parts[1]), int(parts[2])
        except ValueError:
            raise DataError(f"manifest line {line_no}: malformed row range") from None
        img_path = root / rel
        if not img_path.exists():
            raise DataError(f"manifest line {line_no}: image file not found: {img_path}")
        chunk = rows[start:end]
        if len(chunk) != tree.K:
            raise DataError(f"manifest line {line_no}: {len(chunk)} coordinates, expected {tree.K}")
        joints = np.zeros((tree.K, 2))
        vis = np.zeros(tree.K, bool)
        mix = np.zeros(tree.K, np.int64)
        for r in chunk:
            if r[1] not in index:
                raise DataError(f"unknown joint name {r[1]!r}")
            k = index[r[1]]
            try:
                joints[k] = float(r[2]), float(r[3])
                vis[k] = bool(int(r[4]))
                mix[k] = int(r[5])
            except (ValueError, IndexError):
                raise DataError(f"malformed annotation row for sample {r[0]!r}") from None
        samples.append(PoseSample(read_pgm(img_path), joints, vis, mix))
    return PoseDataset.from_samples(tree, samples)


def dataset_io(dataset: PoseDataset | None, path, direction: str, tree: JointTree | None = None):
    if direction == "write":
        write_dataset(dataset, path)
        return dataset
    if direction == "read":
        return read_dataset(path, tree or dataset.tree)
    raise ValueError(f"unknown direction {direction!r}")


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def with_mixtures(dataset: PoseDataset, mixtures: np.ndarray) -> PoseDataset:
    return replace(dataset, mixtures=np.asarray(mixtures, np.int64))

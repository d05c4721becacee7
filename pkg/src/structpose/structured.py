"""Per-joint feature banks and bi-directional tree message passing.

Each joint owns a bank of feature maps. Along every directed tree edge a
stack of same-size convolutions (the geometric transform kernels) shifts and
reweights the sender's refined maps before they are added to the receiver:

    A'_k = relu(A_k + sum_{j -> k} stack_{j,k}(A'_j))

Joints with no incoming edge in the pass direction copy their maps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .tensor import (
    DEFAULT_DTYPE,
    ConvParams,
    Param,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
    split_channels,
)

UPWARD = "upward"
DOWNWARD = "downward"


@dataclass(frozen=True)
class JointTree:
    """Rooted tree over joints; ``parent[i]`` is ``-1`` for the root."""

    names: tuple[str, ...]
    parent: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.parent):
            raise ValueError("names and parent must have the same length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("joint names must be unique")
        roots = [i for i, p in enumerate(self.parent) if p < 0]
        if len(roots) != 1:
            raise ValueError(f"tree must have exactly one root, found {len(roots)}")
        for i, p in enumerate(self.parent):
            if p >= len(self.names):
                raise ValueError(f"joint {self.names[i]!r} has out-of-range parent {p}")
        # every joint must reach the root without revisiting a node
        for i in range(len(self.names)):
            seen, j = set(), i
            while j >= 0:
                if j in seen:
                    raise ValueError(f"cycle through joint {self.names[i]!r}")
                seen.add(j)
                j = self.parent[j]

    @classmethod
    def from_edges(cls, names: Sequence[str], edges: Iterable[tuple[str, str]]) -> "JointTree":
        """Build from ``(parent, child)`` name pairs."""
        index = {n: i for i, n in enumerate(names)}
        parent = [-1] * len(names)
        for p, c in edges:
            if parent[index[c]] != -1:
                raise ValueError(f"joint {c!r} has two parents")
            parent[index[c]] = index[p]
        return cls(tuple(names), tuple(parent))

    @property
    def K(self) -> int:
        return len(self.names)

    @property
    def root(self) -> int:
        return self.parent.index(-1)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def children(self, k: int) -> list[int]:
        return [i for i, p in enumerate(self.parent) if p == k]

    @property
    def edges(self) -> list[tuple[int, int]]:
        """(parent, child) pairs in joint order."""
        return [(p, c) for c, p in enumerate(self.parent) if p >= 0]

    @property
    def downward_order(self) -> list[int]:
        """Breadth-first from the root: parents before children."""
        order, frontier = [], [self.root]
        while frontier:
            order.extend(frontier)
            frontier = [c for k in frontier for c in self.children(k)]
        return order

    @property
    def upward_order(self) -> list[int]:
        return self.downward_order[::-1]

    def order(self, direction: str) -> list[int]:
        if direction == UPWARD:
            return self.upward_order
        if direction == DOWNWARD:
            return self.downward_order
        raise ValueError(f"unknown direction {direction!r}")

    def incoming(self, k: int, direction: str) -> list[int]:
        """Senders into joint ``k``: children when passing upward, the parent downward."""
        if direction == UPWARD:
            return self.children(k)
        if direction == DOWNWARD:
            p = self.parent[k]
            return [p] if p >= 0 else []
        raise ValueError(f"unknown direction {direction!r}")

    def directed_edges(self, direction: str) -> list[tuple[int, int]]:
        """(sender, receiver) pairs for a pass direction."""
        if direction == UPWARD:
            return [(c, p) for p, c in self.edges]
        return list(self.edges)

    def mirror_permutation(self) -> list[int]:
        """Index map swapping ``l_*``/``r_*`` (and ``left_*``/``right_*``) joints."""
        perm = list(range(self.K))
        for i, n in enumerate(self.names):
            for a, b in (("l_", "r_"), ("r_", "l_"), ("left_", "right_"), ("right_", "left_")):
                if n.startswith(a) and b + n[len(a):] in self.names:
                    perm[i] = self.names.index(b + n[len(a):])
        return perm

    def interpolated(self, edges: Iterable[tuple[str, str]] | None = None) -> "JointTree":
        """Insert a midpoint joint on each listed (parent, child) edge (all edges by default).

        The midpoint of ``p -> c`` is named ``p~c`` and becomes ``c``'s new parent.
        """
        chosen = set(edges) if edges is not None else {
            (self.names[p], self.names[c]) for p, c in self.edges
        }
        names = list(self.names)
        pairs = [(self.names[p], self.names[c]) for p, c in self.edges]
        new_pairs = []
        for p, c in pairs:
            if (p, c) in chosen:
                mid = f"{p}~{c}"
                names.append(mid)
                new_pairs += [(p, mid), (mid, c)]
            else:
                new_pairs.append((p, c))
        return JointTree.from_edges(names, new_pairs)


def default_tree() -> JointTree:
    """14 joints rooted at the neck."""
    names = (
        "neck", "head",
        "l_shoulder", "l_elbow", "l_wrist",
        "r_shoulder", "r_elbow", "r_wrist",
        "l_hip", "l_knee", "l_ankle",
        "r_hip", "r_knee", "r_ankle",
    )
    edges = [
        ("neck", "head"),
        ("neck", "l_shoulder"), ("l_shoulder", "l_elbow"), ("l_elbow", "l_wrist"),
        ("neck", "r_shoulder"), ("r_shoulder", "r_elbow"), ("r_elbow", "r_wrist"),
        ("neck", "l_hip"), ("l_hip", "l_knee"), ("l_knee", "l_ankle"),
        ("neck", "r_hip"), ("r_hip", "r_knee"), ("r_knee", "r_ankle"),
    ]
    return JointTree.from_edges(names, edges)


def chain_tree(n: int) -> JointTree:
    """``j0 <- j1 <- ... <- j{n-1}``: a path rooted at ``j0``."""
    return JointTree(tuple(f"j{i}" for i in range(n)), tuple(range(-1, n - 1)))


def get_tree(tree_id: str) -> JointTree:
    if tree_id == "default14":
        return default_tree()
    if tree_id == "default14-interp":
        return default_tree().interpolated()
    if tree_id.startswith("chain"):
        return chain_tree(int(tree_id[5:]))
    raise ValueError(f"unknown tree id {tree_id!r}")


# ---------------------------------------------------------------------------
# per-joint features


def per_joint_features(shared: np.ndarray, banks: Sequence[ConvParams]):
    """``A_k = relu(conv1x1(shared))`` for each bank. Returns (features, cache)."""
    feats, caches = [], []
    for bank in banks:
        z, cc = conv2d_forward(shared, bank)
        a, rc = relu_forward(z)
        feats.append(a)
        caches.append((cc, rc))
    return feats, caches


def per_joint_features_backward(dfeats: Sequence[np.ndarray], caches) -> np.ndarray:
    dshared = None
    for d, (cc, rc) in zip(dfeats, caches):
        g = conv2d_backward(relu_backward(d, rc), cc)
        dshared = g if dshared is None else dshared + g
    return dshared


# ---------------------------------------------------------------------------
# transform kernel stacks


@dataclass
class TransformKernelStack:
    """T same-size convolutions realising one message-passing hop."""

    edge: tuple[int, int]
    kernels: list[ConvParams]
    final_relu: bool = False

    def __post_init__(self):
        if not self.kernels:
            raise ValueError("a transform kernel stack needs at least one kernel")
        for kp in self.kernels:
            kh, kw = kp.kernel_size
            if kh % 2 == 0 or kw % 2 == 0:
                raise ValueError("transform kernels must have odd spatial size")
            if kp.stride != 1 or kp.padding != (kh - 1) // 2 or kh != kw:
                raise ValueError("transform kernels must be square, stride 1, same-size padded")

    @classmethod
    def create(
        cls,
        edge: tuple[int, int],
        channels: int,
        k: int,
        depth: int,
        *,
        init: str = "zeros",
        rng: np.random.Generator | None = None,
        final_relu: bool = False,
        dtype=DEFAULT_DTYPE,
        method: str = "direct",
    ) -> "TransformKernelStack":
        kernels = [
            ConvParams.create(channels, channels, k, init=init, rng=rng, dtype=dtype, method=method)
            for _ in range(depth)
        ]
        return cls(edge, kernels, final_relu)

    @property
    def params(self) -> list[Param]:
        return [p for kp in self.kernels for p in kp.params]


def apply_kernel_stack(msg: np.ndarray, stack: TransformKernelStack):
    """conv -> relu, repeated, with the final conv left linear unless ``final_relu``."""
    caches = []
    x = msg
    last = len(stack.kernels) - 1
    for t, kp in enumerate(stack.kernels):
        x, cc = conv2d_forward(x, kp)
        rc = None
        if t < last or stack.final_relu:
            x, rc = relu_forward(x)
        caches.append((cc, rc))
    if x.shape != msg.shape:
        raise ValueError(f"transform stack changed shape {msg.shape} -> {x.shape}")
    return x, caches


def apply_kernel_stack_backward(dout: np.ndarray, caches) -> np.ndarray:
    g = dout
    for cc, rc in reversed(caches):
        if rc is not None:
            g = relu_backward(g, rc)
        g = conv2d_backward(g, cc)
    return g


@dataclass
class MessageCache:
    direction: str
    order: list[int]
    senders: dict[int, list[int]]
    stack_caches: dict[tuple[int, int], list]
    relu_caches: dict[int, np.ndarray] = field(default_factory=dict)


def pass_messages(
    feats: Sequence[np.ndarray],
    tree: JointTree,
    direction: str,
    stacks: dict[tuple[int, int], TransformKernelStack],
    order: Sequence[int] | None = None,
):
    """Refine one branch along ``direction``. Returns (refined, cache).

    ``stacks`` is keyed by (sender, receiver). ``order`` may override the
    traversal as long as it is a valid topological order for the direction.
    """
    if order is None:
        order = tree.order(direction)
    refined: list[np.ndarray | None] = [None] * tree.K
    cache = MessageCache(direction, list(order), {}, {})
    for k in order:
        senders = tree.incoming(k, direction)
        cache.senders[k] = senders
        if not senders:
            refined[k] = feats[k]
            continue
        total = feats[k]
        for j in senders:
            if refined[j] is None:
                raise ValueError(f"order visits joint {k} before its sender {j}")
            stack = stacks.get((j, k))
            if stack is None:
                raise KeyError(f"missing transform stack for edge {j}->{k}")
            msg, sc = apply_kernel_stack(refined[j], stack)
            cache.stack_caches[(j, k)] = sc
            total = total + msg
        refined[k], cache.relu_caches[k] = relu_forward(total)
    return refined, cache


def pass_messages_backward(drefined: Sequence[np.ndarray], cache: MessageCache) -> list[np.ndarray]:
    """Gradients w.r.t. the original features; stack gradients accumulate in place."""
    grads = [np.array(d, copy=True) for d in drefined]
    dfeats: list[np.ndarray | None] = [None] * len(grads)
    for k in reversed(cache.order):
        senders = cache.senders[k]
        if not senders:
            dfeats[k] = grads[k]
            continue
        dtotal = relu_backward(grads[k], cache.relu_caches[k])
        dfeats[k] = dtotal
        for j in senders:
            grads[j] = grads[j] + apply_kernel_stack_backward(dtotal, cache.stack_caches[(j, k)])
    return dfeats


def concat_branches(up: Sequence[np.ndarray], down: Sequence[np.ndarray]) -> list[np.ndarray]:
    if len(up) != len(down):
        raise ValueError("branches have different joint counts")
    return [concat_channels([a, b]) for a, b in zip(up, down)]


def concat_branches_backward(dfeats: Sequence[np.ndarray], c_up: int):
    ups, downs = [], []
    for d in dfeats:
        a, b = split_channels(d, [c_up, d.shape[1] - c_up])
        ups.append(a)
        downs.append(b)
    return ups, downs


def predict_score_maps(
    feats: Sequence[np.ndarray],
    pred_banks: Sequence[ConvParams],
    shared: np.ndarray,
    background_bank: ConvParams,
):
    """1x1 prediction per joint (M channels each) plus a background channel.

    Returns the assembled (B, K*M + 1, h, w) map and the cache.
    """
    outs, caches = [], []
    for f, bank in zip(feats, pred_banks):
        z, cc = conv2d_forward(f, bank)
        outs.append(z)
        caches.append(cc)
    zb, cb = conv2d_forward(shared, background_bank)
    outs.append(zb)
    sizes = [o.shape[1] for o in outs]
    return concat_channels(outs), (caches, cb, sizes)


def predict_score_maps_backward(dscores: np.ndarray, cache):
    caches, cb, sizes = cache
    parts = split_channels(dscores, sizes)
    dfeats = [conv2d_backward(np.ascontiguousarray(d), cc) for d, cc in zip(parts[:-1], caches)]
    dshared = conv2d_backward(np.ascontiguousarray(parts[-1]), cb)
    return dfeats, dshared


# ---------------------------------------------------------------------------
# receptive field


@dataclass(frozen=True)
class LayerDesc:
    name: str
    kernel: int
    stride: int = 1


@dataclass(frozen=True)
class RFRow:
    name: str
    kernel: int
    stride: int
    jump: int
    rf: int


def receptive_field_of(layers: Sequence[LayerDesc]) -> list[RFRow]:
    """rf <- rf + (k - 1) * jump;  jump <- jump * stride, layer by layer."""
    rf, jump, rows = 1, 1, []
    for layer in layers:
        rf += (layer.kernel - 1) * jump
        jump *= layer.stride
        rows.append(RFRow(layer.name, layer.kernel, layer.stride, jump, rf))
    return rows


def vgg16_fcn_layers(transform_steps: int = 3, transform_kernel: int = 7) -> list[LayerDesc]:
    """Fully convolutional VGG-16 trunk with pool4/pool5 removed, then fcn6/fcn7."""
    layers: list[LayerDesc] = []
    for block, n in ((1, 2), (2, 2), (3, 3)):
        layers += [LayerDesc(f"conv{block}_{i + 1}", 3) for i in range(n)]
        layers.append(LayerDesc(f"pool{block}", 2, 2))
    for block in (4, 5):
        layers += [LayerDesc(f"conv{block}_{i + 1}", 3) for i in range(3)]
    layers.append(LayerDesc("fcn6", 7))
    layers.append(LayerDesc("fcn7", 1))
    layers += [LayerDesc(f"msp{t + 1}", transform_kernel) for t in range(transform_steps)]
    return layers


def format_rf_table(rows: Sequence[RFRow]) -> str:
    header = ("layer", "kernel", "stride", "jump", "rf")
    body = [(r.name, str(r.kernel), str(r.stride), str(r.jump), str(r.rf)) for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    for b in body:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(b, widths))))
    return "\n".join(lines)

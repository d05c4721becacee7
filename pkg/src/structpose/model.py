"""Trainable pose network: backbone, structured feature layer, objective, training."""
from __future__ import annotations

import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .inference import PairwiseParams, ScoreMapSet, decode_unary, default_limbs, pcp_strict
from .structured import (
    DOWNWARD,
    UPWARD,
    JointTree,
    TransformKernelStack,
    concat_branches,
    concat_branches_backward,
    get_tree,
    pass_messages,
    pass_messages_backward,
    per_joint_features,
    per_joint_features_backward,
    predict_score_maps,
    predict_score_maps_backward,
)
from .synth import PoseDataset, make_labels
from .tensor import (
    DEFAULT_DTYPE,
    SGD,
    ConvParams,
    NonFiniteError,
    Param,
    channel_dropout_backward,
    channel_dropout_forward,
    check_finite,
    conv2d_backward,
    conv2d_forward,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
)

log = logging.getLogger(__name__)

VARIANTS = ("baseline", "single-direction", "bi-direction")


@dataclass
class ModelConfig:
    input_size: int = 64
    in_channels: int = 1
    backbone: str = "conv3-16,pool,conv3-32,pool,conv3-64,conv3-64"
    downsample: int = 4
    channels: int = 16
    tree: str = "default14"
    depth: int = 2
    kernel: int = 7
    mixtures: int = 1
    dropout: float = 0.0
    neg_keep: float = 0.1
    variant: str = "bi-direction"
    final_relu: bool = False
    label_radius: float = 1.0
    transform_conv: str = "direct"
    pred_init_scale: float = 0.01

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.input_size % self.downsample:
            raise ValueError("input_size must be divisible by downsample")
        pools = sum(1 for d in self.backbone_layers() if d[0] == "pool")
        if 2**pools != self.downsample:
            raise ValueError(f"backbone downsamples by {2 ** pools}, config says {self.downsample}")
        if not any(d[0] == "conv" for d in self.backbone_layers()):
            raise ValueError("backbone needs at least one convolution")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError("transform kernel size must be odd")
        for name in ("channels", "depth", "mixtures", "in_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.transform_conv not in ("direct", "fft"):
            raise ValueError("transform_conv must be 'direct' or 'fft'")
        if not 0.0 < self.neg_keep <= 1.0:
            raise ValueError("neg_keep must be in (0, 1]")
        get_tree(self.tree)

    def backbone_layers(self) -> list[tuple]:
        """("conv", k, channels) or ("pool",) per token."""
        return [desc for _, desc in self.backbone_named_layers()]

    def backbone_named_layers(self) -> list[tuple[str, tuple]]:
        """Layer names follow ``conv<block>_<i>``/``pool<block>`` unless a token reads ``name=...``."""
        out = []
        block, i = 1, 0
        for raw in self.backbone.split(","):
            name, _, tok = raw.strip().rpartition("=")
            if tok == "pool":
                out.append((name or f"pool{block}", ("pool",)))
                block, i = block + 1, 0
                continue
            i += 1
            name = name or f"conv{block}_{i}"
            try:
                if not tok.startswith("conv"):
                    raise ValueError
                k, c = tok[4:].split("-")
                out.append((name, ("conv", int(k), int(c))))
            except ValueError:
                raise ValueError(f"bad backbone token {tok!r}; expected 'pool' or 'conv<k>-<channels>'") from None
        return out

    @property
    def map_size(self) -> int:
        return self.input_size // self.downsample

    @property
    def joint_tree(self) -> JointTree:
        return get_tree(self.tree)

    @property
    def n_classes(self) -> int:
        return self.joint_tree.K * self.mixtures + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# network


class PoseNet:
    """Backbone -> per-joint banks -> tree message passing -> score maps."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=DEFAULT_DTYPE):
        self.config = config
        self.tree = config.joint_tree
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        c = config
        self.backbone: list[tuple[str, ConvParams | None]] = []
        in_ch = c.in_channels
        for desc in c.backbone_layers():
            if desc[0] == "pool":
                self.backbone.append(("pool", None))
            else:
                _, k, out_ch = desc
                conv = ConvParams.create(in_ch, out_ch, k, rng=rng, group="backbone", dtype=dtype)
                self.backbone.append(("conv", conv))
                in_ch = out_ch
        self.shared_channels = in_ch
        K, C7 = self.tree.K, c.channels
        self.banks_up = [ConvParams.create(in_ch, C7, 1, rng=rng, dtype=dtype) for _ in range(K)]
        self.banks_down = [ConvParams.create(in_ch, C7, 1, rng=rng, dtype=dtype) for _ in range(K)]
        self.stacks_up: dict[tuple[int, int], TransformKernelStack] = {}
        self.stacks_down: dict[tuple[int, int], TransformKernelStack] = {}
        # separate stream: shared weights do not depend on the variant
        stack_rng = np.random.default_rng((seed, 1))
        if c.variant in ("single-direction", "bi-direction"):
            self.stacks_up = self._make_stacks(UPWARD, stack_rng)
        if c.variant == "bi-direction":
            self.stacks_down = self._make_stacks(DOWNWARD, stack_rng)
        self.pred = [ConvParams.create(2 * C7, c.mixtures, 1, rng=rng, dtype=dtype) for _ in range(K)]
        self.background = ConvParams.create(in_ch, 1, 1, rng=rng, dtype=dtype)
        for bank in self.pred + [self.background]:
            bank.weight.data *= dtype(c.pred_init_scale)
        self._cache = None
        self.input_grad = False  # set True to get d loss / d image from backward()

    def _make_stacks(self, direction, rng):
        # Only the last kernel starts at zero: messages vanish at step 0, yet
        # the last kernel still sees a nonzero gradient. An all-zero stack of
        # depth >= 2 is a saddle point that never moves.
        c = self.config
        stacks = {}
        for e in self.tree.directed_edges(direction):
            s = TransformKernelStack.create(
                e, c.channels, c.kernel, c.depth, init="uniform", rng=rng,
                final_relu=c.final_relu, dtype=self.dtype, method=c.transform_conv,
            )
            s.kernels[-1].weight.data[:] = 0
            stacks[e] = s
        return stacks

    # -- parameters ---------------------------------------------------------

    def named_params(self) -> list[tuple[str, Param]]:
        names = self.tree.names
        out: list[tuple[str, Param]] = []
        i = 0
        for kind, conv in self.backbone:
            if kind == "conv":
                out += [(f"backbone.{i}.weight", conv.weight), (f"backbone.{i}.bias", conv.bias)]
                i += 1
        for tag, banks in (("bank_up", self.banks_up), ("bank_down", self.banks_down)):
            for k, bank in enumerate(banks):
                out += [(f"{tag}.{names[k]}.weight", bank.weight), (f"{tag}.{names[k]}.bias", bank.bias)]
        for tag, stacks in (("msg_up", self.stacks_up), ("msg_down", self.stacks_down)):
            for (s, r), stack in stacks.items():
                for t, kp in enumerate(stack.kernels):
                    base = f"{tag}.{names[s]}>{names[r]}.{t}"
                    out += [(f"{base}.weight", kp.weight), (f"{base}.bias", kp.bias)]
        for k, bank in enumerate(self.pred):
            out += [(f"pred.{names[k]}.weight", bank.weight), (f"pred.{names[k]}.bias", bank.bias)]
        out += [("background.weight", self.background.weight), ("background.bias", self.background.bias)]
        return out

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def astype(self, dtype) -> "PoseNet":
        for p in self.params():
            p.astype(dtype)
        self.dtype = dtype
        return self

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = np.zeros_like(p.data)

    # -- forward / backward -------------------------------------------------

    def forward(self, images: np.ndarray, train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        """(B, C_in, S, S) images -> (B, K*M + 1, S/d, S/d) raw scores."""
        c = self.config
        if images.ndim != 4 or images.shape[1:] != (c.in_channels, c.input_size, c.input_size):
            raise ValueError(
                f"expected images of shape (B, {c.in_channels}, {c.input_size}, {c.input_size}), got {images.shape}"
            )
        x = images.astype(self.dtype, copy=False)
        bb_caches = []
        for kind, conv in self.backbone:
            if kind == "pool":
                x, pc = maxpool2_forward(x)
                bb_caches.append(("pool", pc))
            else:
                x, cc = conv2d_forward(x, conv)
                x, rc = relu_forward(x)
                bb_caches.append(("conv", (cc, rc)))
        shared, dc = channel_dropout_forward(x, c.dropout, rng, train)

        A, a_cache = per_joint_features(shared, self.banks_up)
        B, b_cache = per_joint_features(shared, self.banks_down)
        up_cache = down_cache = None
        if self.stacks_up:
            A, up_cache = pass_messages(A, self.tree, UPWARD, self.stacks_up)
        if self.stacks_down:
            B, down_cache = pass_messages(B, self.tree, DOWNWARD, self.stacks_down)
        feats = concat_branches(A, B)
        scores, p_cache = predict_score_maps(feats, self.pred, shared, self.background)
        check_finite(scores, "score maps")
        self._cache = (bb_caches, dc, a_cache, b_cache, up_cache, down_cache, p_cache)
        return scores

    def backward(self, dscores: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        bb_caches, dc, a_cache, b_cache, up_cache, down_cache, p_cache = self._cache
        dscores = dscores.astype(self.dtype, copy=False)
        dfeats, dshared = predict_score_maps_backward(dscores, p_cache)
        dA, dB = concat_branches_backward(dfeats, self.config.channels)
        if up_cache is not None:
            dA = pass_messages_backward(dA, up_cache)
        if down_cache is not None:
            dB = pass_messages_backward(dB, down_cache)
        dshared = dshared + per_joint_features_backward(dA, a_cache)
        dshared = dshared + per_joint_features_backward(dB, b_cache)
        g = channel_dropout_backward(dshared, dc)
        for i in range(len(bb_caches) - 1, -1, -1):
            kind, cache = bb_caches[i]
            if kind == "pool":
                g = maxpool2_backward(g, cache)
            else:
                cc, rc = cache
                g = conv2d_backward(relu_backward(g, rc), cc, need_input_grad=i > 0 or self.input_grad)
        self._cache = None
        if g is not None:
            check_finite(g, "input gradient")
        return g

    def score_maps(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        outs = [self.forward(images[i : i + batch_size]) for i in range(0, len(images), batch_size)]
        self._cache = None
        return np.concatenate(outs) if outs else np.zeros((0, self.config.n_classes, self.config.map_size, self.config.map_size))


# ---------------------------------------------------------------------------
# objective


def masked_loss(scores: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Pixel-wise softmax cross-entropy over supervised pixels, averaged.

    Returns (loss, d loss / d scores).
    """
    if scores.shape[0] != labels.shape[0] or scores.shape[2:] != labels.shape[1:]:
        raise ValueError(f"score shape {scores.shape} does not match labels {labels.shape}")
    count = int(mask.sum())
    if count == 0:
        raise ValueError("masked_loss: no supervised pixels")
    s = scores.astype(np.float64)
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    z = e.sum(axis=1, keepdims=True)
    logp = s - np.log(z)
    picked = np.take_along_axis(logp, labels[:, None].astype(np.int64), axis=1)[:, 0]
    loss = -float(picked[mask].sum()) / count
    grad = e / z
    onehot = np.zeros_like(grad)
    np.put_along_axis(onehot, labels[:, None].astype(np.int64), 1.0, axis=1)
    grad = (grad - onehot) * mask[:, None] / count
    return loss, grad.astype(scores.dtype)


def sample_negative_mask(labels: np.ndarray, background: int, keep_ratio: float, rng) -> np.ndarray:
    """Keep every positive pixel and each background pixel with probability ``keep_ratio``."""
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError("keep_ratio must be in (0, 1]")
    rng = np.random.default_rng(rng)
    positive = labels != background
    if keep_ratio == 1.0:
        return np.ones(labels.shape, bool)
    return positive | (rng.random(labels.shape) < keep_ratio)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr_backbone: float = 0.01
    lr_new: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    hflip: bool = False
    val_mode: str = "argmax"

    @property
    def lr_groups(self) -> dict[str, float]:
        return {"backbone": self.lr_backbone, "new": self.lr_new}


class TrainingDiverged(NonFiniteError):
    pass


@dataclass
class TrainResult:
    model: PoseNet
    history: list[tuple[int, float, float]] = field(default_factory=list)  # (epoch, loss, val_pcp)

    def loss_csv(self) -> str:
        lines = ["epoch,train_loss,val_pcp"]
        for ep, loss, pcp in self.history:
            lines.append(f"{ep},{loss:.6f},{'' if math.isnan(pcp) else f'{pcp:.4f}'}")
        return "\n".join(lines) + "\n"


def dataset_labels(dataset: PoseDataset, config: ModelConfig) -> np.ndarray:
    return make_labels(
        dataset.joints,
        dataset.mixtures if config.mixtures > 1 else np.zeros_like(dataset.mixtures),
        map_size=config.map_size,
        downsample=config.downsample,
        n_mixtures=config.mixtures,
        radius=config.label_radius,
        visible=dataset.visible,
    )


def _flip_batch(images, labels, tree: JointTree, M: int):
    """Mirror images and swap left/right class indices of a label batch."""
    perm = np.asarray(tree.mirror_permutation())
    K = tree.K
    cls_map = np.arange(K * M + 1)
    for k in range(K):
        cls_map[k * M : (k + 1) * M] = perm[k] * M + np.arange(M)
    return images[..., ::-1].copy(), cls_map[labels[..., ::-1]]


def train(
    model: PoseNet,
    dataset: PoseDataset,
    tcfg: TrainConfig,
    val: PoseDataset | None = None,
    pairwise: PairwiseParams | None = None,
    progress: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Mini-batch momentum SGD over the masked objective."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    cfg = model.config
    rng = np.random.default_rng(tcfg.seed)
    images = dataset.float_images(model.dtype)
    labels = dataset_labels(dataset, cfg)
    background = cfg.n_classes - 1
    opt = SGD(model.params(), tcfg.lr_groups, tcfg.momentum)
    model.zero_grad()
    result = TrainResult(model)
    n = len(dataset)
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            xb, yb = images[idx], labels[idx]
            if tcfg.hflip:
                flip = rng.random(len(idx)) < 0.5
                if flip.any():
                    fx, fy = _flip_batch(xb[flip], yb[flip], model.tree, cfg.mixtures)
                    xb, yb = xb.copy(), yb.copy()
                    xb[flip], yb[flip] = fx, fy
            mask = sample_negative_mask(yb, background, cfg.neg_keep, rng)
            scores = model.forward(xb, train=True, rng=rng)
            loss, dscores = masked_loss(scores, yb, mask)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {start // tcfg.batch_size}")
            model.backward(dscores)
            opt.step()
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        val_pcp = float("nan")
        if val is not None and len(val):
            _, res = evaluate(model, val, pairwise, tcfg.val_mode)
            val_pcp = res.mean
        result.history.append((epoch, mean_loss, val_pcp))
        log.info("epoch %d loss %.4f val_pcp %.2f", epoch, mean_loss, val_pcp)
        if progress is not None:
            progress(epoch, mean_loss, val_pcp)
    return result


def predict(model: PoseNet, dataset_or_images, pairwise: PairwiseParams | None, mode: str = "tree_dp", batch_size: int = 64):
    """Decode every image; returns (estimates, raw score maps)."""
    if isinstance(dataset_or_images, PoseDataset):
        images = dataset_or_images.float_images(model.dtype)
    else:
        images = dataset_or_images
    cfg = model.config
    scores = check_finite(model.score_maps(images, batch_size), "score maps")
    ests = []
    for s in scores:
        sm = ScoreMapSet(s, model.tree.K, cfg.mixtures, cfg.downsample)
        ests.append(decode_unary(sm.joint_unary(), pairwise, model.tree, mode, cfg.downsample))
    return ests, scores


def evaluate(model: PoseNet, dataset: PoseDataset, pairwise: PairwiseParams | None, mode: str = "tree_dp"):
    ests, _ = predict(model, dataset, pairwise, mode)
    coords = np.stack([e.coords for e in ests])
    return ests, pcp_strict(coords, dataset.joints, default_limbs(model.tree))


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"SPL1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: PoseNet, path: str | os.PathLike) -> None:
    """Little-endian: magic, u32 version, u32 count, then (u16 name len, name, u8 rank, u32 dims, f32 data)."""
    named = model.named_params()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(named))]
    for name, p in named:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", p.data.ndim) + struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def read_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated file")
        out = data[pos : pos + n]
        pos += n
        return out

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).copy()
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return tensors


def load_checkpoint(model: PoseNet, path: str | os.PathLike) -> PoseNet:
    """Validate every tensor before touching the model; no partial loads."""
    tensors = read_checkpoint(path)
    named = model.named_params()
    for name, p in named:
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r} required by the model config")
        if tensors[name].shape != p.data.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {tensors[name].shape}, model config expects {p.data.shape}"
            )
    extra = set(tensors) - {n for n, _ in named}
    if extra:
        raise CheckpointError(f"checkpoint has tensor {sorted(extra)[0]!r} not present in the model config")
    for name, p in named:
        p.data = tensors[name].astype(model.dtype)
        p.grad = None
        p.velocity = None
    return model

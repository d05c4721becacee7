"""Dense tensor layers with explicit forward and backward passes.

Activations are plain ``numpy`` arrays in (batch, channel, row, col) layout.
Learnable arrays are wrapped in :class:`Param`, which carries the gradient
buffer and optimizer state. Every forward function returns ``(out, cache)``
and the matching backward function consumes the cache, so one layer may be
applied several times within a step without hidden state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf shows up in a forward or backward value."""


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {what}")
    return x


@dataclass
class Param:
    """A learnable array with a lazily allocated gradient buffer."""

    data: np.ndarray
    group: str = "new"
    grad: np.ndarray | None = None
    velocity: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0)

    def astype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.grad = None
        self.velocity = None


@dataclass
class ConvParams:
    """Kernel bank (out, in, kh, kw), per-output-channel bias, stride and zero padding."""

    weight: Param
    bias: Param
    stride: int = 1
    padding: int = 0
    method: str = "direct"  # "direct" (im2col) or "fft" (stride 1 only)

    @classmethod
    def create(
        cls,
        in_ch: int,
        out_ch: int,
        k: int,
        *,
        stride: int = 1,
        padding: int | None = None,
        rng: np.random.Generator | None = None,
        init: str = "uniform",
        group: str = "new",
        dtype=DEFAULT_DTYPE,
        method: str = "direct",
    ) -> "ConvParams":
        if padding is None:
            padding = (k - 1) // 2
        shape = (out_ch, in_ch, k, k)
        if init == "zeros":
            w = np.zeros(shape, dtype=dtype)
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            bound = np.sqrt(6.0 / (in_ch * k * k))
            w = rng.uniform(-bound, bound, size=shape).astype(dtype)
        b = np.zeros(out_ch, dtype=dtype)
        return cls(Param(w, group), Param(b, group), stride, padding, method)

    @property
    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel_size
        ho = (h + 2 * self.padding - kh) // self.stride + 1
        wo = (w + 2 * self.padding - kw) // self.stride + 1
        return ho, wo

    def __call__(self, x: np.ndarray):
        return conv2d_forward(x, self)


# ---------------------------------------------------------------------------
# convolution


def conv2d_forward(x: np.ndarray, p: ConvParams):
    """Cross-correlation of ``x`` with ``p.weight`` plus bias."""
    if x.ndim != 4:
        raise ValueError(f"conv2d expects a 4-d input, got shape {x.shape}")
    B, C, H, W = x.shape
    O, Ci, kh, kw = p.weight.shape
    if C != Ci:
        raise ValueError(f"conv2d channel mismatch: input has {C}, kernel expects {Ci}")
    Ho, Wo = p.output_size(H, W)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"conv2d output would be empty for input {H}x{W}")
    if p.method == "fft" and kh > 1:
        return _conv2d_fft_forward(x, p, Ho, Wo)
    w2 = p.weight.data.reshape(O, -1)

    if kh == 1 and kw == 1 and p.stride == 1 and p.padding == 0:
        out = np.tensordot(w2, x, axes=([1], [1])).transpose(1, 0, 2, 3)
        out += p.bias.data[None, :, None, None]
        return np.ascontiguousarray(out), (x, None, p, (H, W))

    cols = _im2col(x, kh, kw, p.stride, p.padding, Ho, Wo)
    out = cols @ w2.T
    out += p.bias.data
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))
    return out, (None, cols, p, (H, W))


def conv2d_backward(dout: np.ndarray, cache, need_input_grad: bool = True) -> np.ndarray | None:
    """Accumulate weight/bias gradients and return the input gradient.

    With ``need_input_grad=False`` only the parameter gradients are computed.
    """
    if isinstance(cache[0], str):
        return _conv2d_fft_backward(dout, cache)
    x, cols, p, (H, W) = cache
    B, O, Ho, Wo = dout.shape
    _, C, kh, kw = p.weight.shape
    w2 = p.weight.data.reshape(O, -1)

    if cols is None:
        # 1x1 fast path
        p.weight.accumulate(
            np.tensordot(dout, x, axes=([0, 2, 3], [0, 2, 3])).reshape(p.weight.shape)
        )
        p.bias.accumulate(dout.sum(axis=(0, 2, 3)))
        if not need_input_grad:
            return None
        return np.tensordot(w2, dout, axes=([0], [1])).transpose(1, 0, 2, 3)

    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, O)
    p.weight.accumulate((d2.T @ cols).reshape(p.weight.shape))
    p.bias.accumulate(d2.sum(axis=0))
    if not need_input_grad:
        return None
    s, pad = p.stride, p.padding
    if s == 1 and pad <= min(kh, kw) - 1:
        # input gradient = correlation of the padded output gradient with the flipped kernel
        wf = p.weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(C, -1)
        dcols = _im2col(dout, kh, kw, 1, (kh - 1 - pad, kw - 1 - pad), H, W)
        return np.ascontiguousarray((dcols @ wf.T).reshape(B, H, W, C).transpose(0, 3, 1, 2))
    dcols = (d2 @ w2).reshape(B, Ho, Wo, C, kh, kw).transpose(4, 5, 0, 3, 1, 2)
    dxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += dcols[i, j]
    if pad:
        dxp = dxp[:, :, pad : pad + H, pad : pad + W]
    return np.ascontiguousarray(dxp)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad, Ho: int, Wo: int) -> np.ndarray:
    """(B*Ho*Wo, C*kh*kw) patch matrix; ``pad`` is an int or (pad_h, pad_w)."""
    B, C = x.shape[:2]
    ph, pw = (pad, pad) if isinstance(pad, int) else pad
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)


def _conv2d_fft_forward(x: np.ndarray, p: ConvParams, Ho: int, Wo: int):
    """Same result as the direct path via zero-padded real FFTs.

    Output ``out[m] = full[m + k - 1 - pad]`` where ``full`` is the linear
    convolution with the flipped kernel. Rounding differs from direct summation.
    """
    B, C, H, W = x.shape
    O, _, kh, kw = p.weight.shape
    if p.stride != 1 or p.padding > min(kh, kw) - 1:
        raise ValueError("fft convolution needs stride 1 and padding < kernel size")
    shape = (H + kh - 1, W + kw - 1)
    X = scipy.fft.rfft2(x, s=shape).transpose(2, 3, 0, 1)  # (u, v, B, C)
    Wf = scipy.fft.rfft2(p.weight.data[:, :, ::-1, ::-1], s=shape).transpose(2, 3, 1, 0)  # (u, v, C, O)
    full = scipy.fft.irfft2(np.matmul(X, Wf).transpose(2, 3, 0, 1), s=shape)
    oh, ow = kh - 1 - p.padding, kw - 1 - p.padding
    out = full[:, :, oh : oh + Ho, ow : ow + Wo].astype(x.dtype)
    out += p.bias.data[None, :, None, None]
    return np.ascontiguousarray(out), ("fft", X, Wf, p, (H, W), shape)


def _conv2d_fft_backward(dout: np.ndarray, cache) -> np.ndarray:
    _, X, Wf, p, (H, W), shape = cache
    B, O, Ho, Wo = dout.shape
    kh, kw = p.kernel_size
    oh, ow = kh - 1 - p.padding, kw - 1 - p.padding
    g = np.zeros((B, O) + shape, dtype=dout.dtype)
    g[:, :, oh : oh + Ho, ow : ow + Wo] = dout
    G = scipy.fft.rfft2(g).transpose(2, 3, 0, 1)  # (u, v, B, O)
    dX = np.matmul(G, np.conj(Wf).swapaxes(-1, -2)).transpose(2, 3, 0, 1)
    dx = scipy.fft.irfft2(dX, s=shape)[:, :, :H, :W]
    dWf = np.matmul(np.conj(X).swapaxes(-1, -2), G).transpose(3, 2, 0, 1)  # (O, C, u, v)
    dw = scipy.fft.irfft2(dWf, s=shape)[:, :, :kh, :kw][:, :, ::-1, ::-1]
    p.weight.accumulate(dw.astype(p.weight.data.dtype))
    p.bias.accumulate(dout.sum(axis=(0, 2, 3)))
    return np.ascontiguousarray(dx.astype(dout.dtype))


# ---------------------------------------------------------------------------
# pointwise and pooling


def relu_forward(x: np.ndarray):
    out = np.maximum(x, 0)
    return out, out


def relu_backward(dout: np.ndarray, cache) -> np.ndarray:
    return dout * (cache > 0)


def maxpool2_forward(x: np.ndarray):
    """2x2 / stride-2 max pooling; ties resolve to the first row-major element."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        x = np.pad(x, ((0, 0), (0, 0), (0, H % 2), (0, W % 2)), mode="edge")
    q = (x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2], x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2])
    out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
    # winner masks in row-major window order; earlier elements take ties
    taken = q[0] == out
    masks = [taken]
    for part in q[1:3]:
        m = (part == out) & ~taken
        masks.append(m)
        taken = taken | m
    masks.append(~taken)
    return out, (masks, (H, W), x.shape[2:])


def maxpool2_backward(dout: np.ndarray, cache) -> np.ndarray:
    masks, (H, W), (Hp, Wp) = cache
    B, C = dout.shape[:2]
    dx = np.zeros((B, C, Hp, Wp), dtype=dout.dtype)
    for (i, j), m in zip(((0, 0), (0, 1), (1, 0), (1, 1)), masks):
        dx[:, :, i::2, j::2] = dout * m
    if (Hp, Wp) != (H, W):
        # replicated edge row/col sends its gradient back to the edge it copied
        if Hp != H:
            dx[:, :, H - 1, :] += dx[:, :, H, :]
        if Wp != W:
            dx[:, :, :, W - 1] += dx[:, :, :, W]
        dx = np.ascontiguousarray(dx[:, :, :H, :W])
    return dx


def concat_channels(xs: Sequence[np.ndarray]) -> np.ndarray:
    if not xs:
        raise ValueError("concat_channels needs at least one input")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ValueError(f"concat_channels shape mismatch: {ref} vs {x.shape}")
    if len(xs) == 1:
        return xs[0]
    return np.concatenate(xs, axis=1)


def split_channels(x: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    """Inverse of :func:`concat_channels`; also the backward of concatenation."""
    if sum(sizes) != x.shape[1]:
        raise ValueError(f"split sizes {list(sizes)} do not sum to {x.shape[1]}")
    bounds = np.cumsum(sizes)[:-1]
    return np.split(x, bounds, axis=1)


def channel_dropout_forward(
    x: np.ndarray, p: float, rng: np.random.Generator | None, train: bool = True
):
    """Zero whole channels with probability ``p``; survivors are rescaled."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random((x.shape[0], x.shape[1], 1, 1)) >= p).astype(x.dtype)
    keep /= 1.0 - p
    return x * keep, keep


def channel_dropout_backward(dout: np.ndarray, cache) -> np.ndarray:
    return dout if cache is None else dout * cache


# ---------------------------------------------------------------------------
# optimisation


class SGD:
    """Momentum SGD with per-group learning rates.

    velocity <- momentum * velocity - rate * grad;  weight <- weight + velocity
    """

    def __init__(self, params: Iterable[Param], lr_groups: dict[str, float], momentum: float = 0.9):
        self.params = list(params)
        self.lr_groups = dict(lr_groups)
        self.momentum = momentum
        missing = {p.group for p in self.params} - set(self.lr_groups)
        if missing:
            raise KeyError(f"no learning rate for parameter groups {sorted(missing)}")

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ValueError("sgd_step called on a parameter without a gradient buffer")
            rate = self.lr_groups[p.group]
            if p.velocity is None:
                p.velocity = np.zeros_like(p.data)
            p.velocity *= self.momentum
            p.velocity -= rate * p.grad
            p.data += p.velocity
            p.grad.fill(0)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def sgd_step(params: Iterable[Param], lr_groups: dict[str, float], momentum: float = 0.9) -> None:
    SGD(params, lr_groups, momentum).step()


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    worst: str = ""
    errors: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    loss_and_backward: Callable[[], float],
    params: Sequence[Param],
    *,
    inputs: Sequence[np.ndarray] = (),
    input_grads: Callable[[], Sequence[np.ndarray]] | None = None,
    epsilon: float = 1e-5,
    tolerance: float = 1e-6,
    n_samples: int = 20,
    seed: int = 0,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_and_backward`` must run a deterministic forward pass, populate the
    gradient buffers of ``params`` and return the scalar loss. Coordinates are
    sampled per array; relative error is ``|a - n| / max(|a| + |n|, floor)``.
    ``inputs`` are arrays perturbed in place whose analytic gradients are
    returned by ``input_grads`` after the reference call.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = np.zeros_like(p.data)
    loss0 = loss_and_backward()
    if not np.isfinite(loss0):
        raise NonFiniteError("grad_check: non-finite loss")
    targets: list[tuple[str, np.ndarray, np.ndarray]] = [
        (f"param[{i}]", p.data, p.grad.copy()) for i, p in enumerate(params)
    ]
    if inputs:
        if input_grads is None:
            raise ValueError("input_grads is required when inputs are checked")
        for i, (x, g) in enumerate(zip(inputs, input_grads())):
            targets.append((f"input[{i}]", x, np.array(g, copy=True)))

    def loss_only() -> float:
        for p in params:
            p.grad = np.zeros_like(p.data)
        return float(loss_and_backward())

    worst, worst_name, errors = 0.0, "", []
    for name, arr, analytic in targets:
        flat = arr.reshape(-1)
        aflat = analytic.reshape(-1)
        n = min(n_samples, flat.size)
        for idx in rng.choice(flat.size, size=n, replace=False):
            old = flat[idx]
            flat[idx] = old + epsilon
            lp = loss_only()
            flat[idx] = old - epsilon
            lm = loss_only()
            flat[idx] = old
            num = (lp - lm) / (2 * epsilon)
            a = float(aflat[idx])
            err = abs(a - num) / max(abs(a) + abs(num), floor)
            errors.append(err)
            if err > worst:
                worst, worst_name = err, f"{name}[{idx}]"
    # restore analytic buffers so callers see the reference gradients
    for p, (_, _, g) in zip(params, targets):
        p.grad = g
    return GradCheckReport(worst, tolerance, len(errors), worst_name, errors)

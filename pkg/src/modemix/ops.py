"""Differentiable operations: dense/conv layers, resampling, activations,
losses and the gradient-norm regularizer.

Every op computes in float64 numpy and records a backward closure on the
active tape.  Backward closures take ``(g, needs)`` where ``needs`` marks
which input gradients must actually be produced, so frozen networks cost
nothing extra.  The ops a discriminator is built from also carry a
``vjp`` that rebuilds the backward out of recorded ops, making gradients
of gradients work (see :meth:`modemix.tensor.Tape.grad_tensors`).

Convolutions are fixed at 3x3, padding 1, stride 1; resolution changes
happen only through the explicit ``upsample2x``/``downsample2x`` ops.
"""
from __future__ import annotations

import numpy as np

from .tensor import (NonFiniteError, Tape, TapeError, Tensor, TensorError,
                     _binding, apply_op, current_tape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise TensorError(f"add shape mismatch {a.shape} vs {b.shape}")
        return apply_op("add", a.data + b.data, (a, b),
                        lambda g, needs: (g, g),
                        lambda g: (g, g))
    c = np.asarray(b, dtype=np.float64)
    return apply_op("add", a.data + c, (a,),
                    lambda g, needs: (g,),
                    lambda g: (g,))


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise TensorError(f"sub shape mismatch {a.shape} vs {b.shape}")
        return apply_op("sub", a.data - b.data, (a, b),
                        lambda g, needs: (g, -g),
                        lambda g: (g, mul(g, -1.0)))
    c = np.asarray(b, dtype=np.float64)
    return apply_op("sub", a.data - c, (a,),
                    lambda g, needs: (g,),
                    lambda g: (g,))


def mul(a: Tensor, b) -> Tensor:
    """a * b with b a Tensor (same shape), scalar, or constant ndarray."""
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise TensorError(f"mul shape mismatch {a.shape} vs {b.shape}")
        ad, bd = a.data, b.data
        return apply_op("mul", ad * bd, (a, b),
                        lambda g, needs: (g * bd if needs[0] else None,
                                          g * ad if needs[1] else None),
                        lambda g: (mul(g, b), mul(g, a)))
    c = np.asarray(b, dtype=np.float64)
    return apply_op("mul", a.data * c, (a,),
                    lambda g, needs: (g * c,),
                    lambda g: (mul(g, c),))


_binding["add"] = add
_binding["sub"] = sub
_binding["mul"] = mul


def square(a: Tensor) -> Tensor:
    return mul(a, a)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return apply_op("reshape", a.data.reshape(shape), (a,),
                    lambda g, needs: (g.reshape(old),),
                    lambda g: (reshape(g, old),))


def take_row(a: Tensor, i: int) -> Tensor:
    """Row i of a 2-d tensor as a [1, D] tensor."""
    def bwd(g, needs):
        out = np.zeros_like(a.data)
        out[i] = g[0]
        return (out,)
    return apply_op("take_row", a.data[i:i + 1].copy(), (a,), bwd)


def slice_rows(a: Tensor, lo: int, hi: int) -> Tensor:
    """Rows [lo, hi) along the leading axis."""
    def bwd(g, needs):
        out = np.zeros_like(a.data)
        out[lo:hi] = g
        return (out,)
    return apply_op("slice_rows", a.data[lo:hi].copy(), (a,), bwd)


# ---------------------------------------------------------------------------
# reductions and broadcasts
# ---------------------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape
    return apply_op("sum_all", np.asarray(a.data.sum()), (a,),
                    lambda g, needs: (np.broadcast_to(g, shape).copy(),),
                    lambda g: (bcast(g, shape),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.data.shape
    return apply_op("mean_all", np.asarray(a.data.mean()), (a,),
                    lambda g, needs: (np.broadcast_to(g / n, shape).copy(),),
                    lambda g: (mul(bcast(g, shape), 1.0 / n),))


def bcast(a: Tensor, shape) -> Tensor:
    """Broadcast a scalar tensor to ``shape``."""
    if a.data.size != 1:
        raise TensorError("bcast expects a scalar")
    return apply_op("bcast", np.full(shape, float(a.data)), (a,),
                    lambda g, needs: (np.asarray(g.sum()),))


def sum_per_sample(a: Tensor) -> Tensor:
    """[B, ...] -> [B], summing everything but the leading axis."""
    b = a.data.shape[0]
    cols = a.data.size // b

    def bwd(g, needs):
        return (np.repeat(g.reshape(b, 1), cols, axis=1).reshape(a.data.shape),)
    return apply_op("sum_per_sample", a.data.reshape(b, -1).sum(axis=1), (a,), bwd)


def sum_rows(a: Tensor) -> Tensor:
    """[B, O] -> [O]."""
    b = a.data.shape[0]
    return apply_op("sum_rows", a.data.sum(axis=0), (a,),
                    lambda g, needs: (np.broadcast_to(g, (b,) + g.shape).copy(),))


def sum_bhw(a: Tensor) -> Tensor:
    """[B, C, H, W] -> [C]."""
    shp = a.data.shape

    def bwd(g, needs):
        return (np.broadcast_to(g[None, :, None, None], shp).copy(),)
    return apply_op("sum_bhw", a.data.sum(axis=(0, 2, 3)), (a,), bwd)


# ---------------------------------------------------------------------------
# matmul family
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise TensorError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return apply_op("matmul", ad @ bd, (a, b),
                    lambda g, needs: (g @ bd.T if needs[0] else None,
                                      ad.T @ g if needs[1] else None),
                    lambda g: (matmul_nt(g, b), matmul_tn(a, g)))


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T"""
    ad, bd = a.data, b.data
    return apply_op("matmul_nt", ad @ bd.T, (a, b),
                    lambda g, needs: (g @ bd if needs[0] else None,
                                      g.T @ ad if needs[1] else None))


def matmul_tn(a: Tensor, b: Tensor) -> Tensor:
    """a.T @ b"""
    ad, bd = a.data, b.data
    return apply_op("matmul_tn", ad.T @ bd, (a, b),
                    lambda g, needs: (bd @ g.T if needs[0] else None,
                                      ad @ g if needs[1] else None))


def linear(x: Tensor, w: Tensor, b: Tensor, scale: float = 1.0) -> Tensor:
    """x[B,I] @ (w[I,O] * scale) + b[O]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0] \
            or b.data.shape != (w.shape[1],):
        raise TensorError(
            f"linear shape mismatch x{x.shape} w{w.shape} b{b.data.shape}")
    xd, wd = x.data, w.data * scale
    out = xd @ wd + b.data

    def bwd(g, needs):
        return (g @ wd.T if needs[0] else None,
                (xd.T @ g) * scale if needs[1] else None,
                g.sum(axis=0) if needs[2] else None)

    def vjp(g):
        return (mul(matmul_nt(g, w), scale),
                mul(matmul_tn(x, g), scale),
                sum_rows(g))
    return apply_op("linear", out, (x, w, b), bwd, vjp)


# ---------------------------------------------------------------------------
# convolution family (3x3, pad 1, stride 1)
# ---------------------------------------------------------------------------

_es_paths: dict[tuple, list] = {}


def _pad1(x: np.ndarray) -> np.ndarray:
    bs, c, h, w = x.shape
    xp = np.zeros((bs, c, h + 2, w + 2))
    xp[:, :, 1:-1, 1:-1] = x
    return xp


def _windows(xp: np.ndarray) -> np.ndarray:
    """Strided [B,C,3,3,H,W] view of the 1-padded input (no copy)."""
    bs, c, hp, wp = xp.shape
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (bs, c, 3, 3, hp - 2, wp - 2), (s0, s1, s2, s3, s2, s3))


def _cached_path(spec: str, a_shape, b_shape):
    key = (spec, a_shape, b_shape)
    p = _es_paths.get(key)
    if p is None:
        p = np.einsum_path(spec, np.empty(a_shape), np.empty(b_shape),
                           optimize="optimal")[0]
        _es_paths[key] = p
    return p


def _cc(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Cross-correlation over the strided window view (no im2col copy)."""
    win = _windows(_pad1(x))
    path = _cached_path("bcijyx,fcij->bfyx", win.shape, k.shape)
    return np.einsum("bcijyx,fcij->bfyx", win, k, optimize=path)


def _flipswap(k: np.ndarray) -> np.ndarray:
    """[F,C,3,3] -> [C,F,3,3] with both spatial axes flipped (involution)."""
    return np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))


def _icg(g: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Input gradient of _cc: correlate g with the flip-swapped kernel."""
    return _cc(g, _flipswap(k))


def _wg_padded(xp: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Weight gradient of _cc from the padded input: [F,C,3,3] via nine
    shifted contractions."""
    h, w = g.shape[2], g.shape[3]
    f, c = g.shape[1], xp.shape[1]
    out = np.empty((f, c, 3, 3))
    for i in range(3):
        for j in range(3):
            xs = xp[:, :, i:i + h, j:j + w]
            out[:, :, i, j] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
    return out


def _wg(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return _wg_padded(_pad1(x), g)


def conv2d(x: Tensor, k: Tensor, b: Tensor, scale: float = 1.0) -> Tensor:
    """Cross-correlation of x[B,C,H,W] with k[F,C,3,3]*scale plus bias[F]."""
    if x.data.ndim != 4 or k.data.ndim != 4 or k.data.shape[2:] != (3, 3) \
            or x.shape[1] != k.shape[1] or b.data.shape != (k.shape[0],):
        raise TensorError(
            f"conv2d shape mismatch x{x.shape} k{k.shape} b{b.data.shape}")
    xd = x.data
    kd = k.data * scale
    xp = _pad1(xd)
    win = _windows(xp)
    path = _cached_path("bcijyx,fcij->bfyx", win.shape, kd.shape)
    out = np.einsum("bcijyx,fcij->bfyx", win, kd, optimize=path)
    out += b.data[None, :, None, None]

    def bwd(g, needs):
        return (_icg(g, kd) if needs[0] else None,
                _wg_padded(xp, g) * scale if needs[1] else None,
                g.sum(axis=(0, 2, 3)) if needs[2] else None)

    def vjp(g):
        return (conv2d_igrad(g, k, scale),
                conv2d_wgrad(x, g, scale),
                sum_bhw(g))
    return apply_op("conv2d", out, (x, k, b), bwd, vjp)


def conv2d_igrad(g: Tensor, k: Tensor, scale: float = 1.0) -> Tensor:
    """d(conv2d)/d(input) as an op, so it is differentiable again."""
    gd, kd = g.data, k.data * scale
    out = _icg(gd, kd)

    def bwd(gg, needs):
        return (_cc(gg, kd) if needs[0] else None,
                _flipswap(_wg(gd, gg)) * scale if needs[1] else None)
    return apply_op("conv2d_igrad", out, (g, k), bwd)


def conv2d_wgrad(x: Tensor, g: Tensor, scale: float = 1.0) -> Tensor:
    """d(conv2d)/d(kernel) as an op: [F,C,3,3]."""
    xd, gd = x.data, g.data
    out = _wg(xd, gd) * scale

    def bwd(gg, needs):
        gs = gg * scale
        return (_icg(gd, gs) if needs[0] else None,
                _cc(xd, gs) if needs[1] else None)
    return apply_op("conv2d_wgrad", out, (x, g), bwd)


def conv1x1(x: Tensor, w: Tensor, b: Tensor, scale: float = 1.0) -> Tensor:
    """Per-pixel channel projection: x[B,C,H,W], w[C,F] -> [B,F,H,W]."""
    if x.data.ndim != 4 or w.data.ndim != 2 or x.shape[1] != w.shape[0] \
            or b.data.shape != (w.shape[1],):
        raise TensorError(
            f"conv1x1 shape mismatch x{x.shape} w{w.shape} b{b.data.shape}")
    xd = x.data
    wd = w.data * scale
    out = np.einsum("bchw,cf->bfhw", xd, wd, optimize=True) + \
        b.data[None, :, None, None]

    def bwd(g, needs):
        gx = np.einsum("bfhw,cf->bchw", g, wd, optimize=True) \
            if needs[0] else None
        gw = np.einsum("bchw,bfhw->cf", xd, g, optimize=True) * scale \
            if needs[1] else None
        gb = g.sum(axis=(0, 2, 3)) if needs[2] else None
        return (gx, gw, gb)

    def vjp(g):
        return (conv1x1_nt(g, w, scale), conv1x1_wgrad(x, g, scale), sum_bhw(g))
    return apply_op("conv1x1", out, (x, w, b), bwd, vjp)


def conv1x1_nt(g: Tensor, w: Tensor, scale: float = 1.0) -> Tensor:
    """d(conv1x1)/d(input): g[B,F,H,W], w[C,F] -> [B,C,H,W]."""
    gd, wd = g.data, w.data * scale
    out = np.einsum("bfhw,cf->bchw", gd, wd, optimize=True)

    def bwd(gg, needs):
        dg = np.einsum("bchw,cf->bfhw", gg, wd, optimize=True) \
            if needs[0] else None
        dw = np.einsum("bchw,bfhw->cf", gg, gd, optimize=True) * scale \
            if needs[1] else None
        return (dg, dw)
    return apply_op("conv1x1_nt", out, (g, w), bwd)


def conv1x1_wgrad(x: Tensor, g: Tensor, scale: float = 1.0) -> Tensor:
    """d(conv1x1)/d(weight): [C,F]."""
    xd, gd = x.data, g.data
    out = np.einsum("bchw,bfhw->cf", xd, gd, optimize=True) * scale

    def bwd(gg, needs):
        gs = gg * scale
        dx = np.einsum("bfhw,cf->bchw", gd, gs, optimize=True) \
            if needs[0] else None
        dgrad = np.einsum("bchw,cf->bfhw", xd, gs, optimize=True) \
            if needs[1] else None
        return (dx, dgrad)
    return apply_op("conv1x1_wgrad", out, (x, g), bwd)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _up2(x: np.ndarray) -> np.ndarray:
    bs, c, h, w = x.shape
    return np.broadcast_to(
        x[:, :, :, None, :, None], (bs, c, h, 2, w, 2)).reshape(bs, c, 2 * h, 2 * w)


def _blocksum(g: np.ndarray) -> np.ndarray:
    bs, c, h2, w2 = g.shape
    return g.reshape(bs, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour doubling; backward sums each 2x2 block."""
    if x.data.ndim != 4:
        raise TensorError("upsample2x expects [B,C,H,W]")
    return apply_op("upsample2x", _up2(x.data), (x,),
                    lambda g, needs: (_blocksum(g),))


def downsample2x(x: Tensor) -> Tensor:
    """2x2 mean pooling; spatial dims must be even."""
    if x.data.ndim != 4:
        raise TensorError("downsample2x expects [B,C,H,W]")
    bs, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise TensorError(f"downsample2x needs even spatial dims, got {h}x{w}")
    out = x.data.reshape(bs, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return apply_op("downsample2x", out, (x,),
                    lambda g, needs: (_up2(g) * 0.25,),
                    lambda g: (mul(upsample2x(g), 0.25),))


# ---------------------------------------------------------------------------
# activations and normalizers
# ---------------------------------------------------------------------------

def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    neg = x.data < 0
    out = x.data.copy()
    out[neg] *= slope

    def bwd(g, needs):
        gx = g.copy()
        gx[neg] *= slope
        return (gx,)

    def vjp(g):
        mask = np.where(neg, slope, 1.0)
        return (mul(g, mask),)
    return apply_op("leaky_relu", out, (x,), bwd, vjp)


def softmax(x: Tensor) -> Tensor:
    """Row softmax of [B,K], computed with max-subtraction."""
    if x.data.ndim != 2:
        raise TensorError("softmax expects [B,K]")
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteError("softmax received non-finite input")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(g, needs):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)
    return apply_op("softmax", p, (x,), bwd)


def normalize_latent(z: Tensor) -> Tensor:
    """Scale each row to unit RMS: z / sqrt(mean(z^2) + 1e-8)."""
    if z.data.ndim != 2:
        raise TensorError("normalize_latent expects [B,D]")
    d = z.data.shape[1]
    s = 1.0 / np.sqrt((z.data ** 2).mean(axis=1, keepdims=True) + 1e-8)
    out = z.data * s

    def bwd(g, needs):
        dot = (g * z.data).sum(axis=1, keepdims=True)
        return (g * s - z.data * (s ** 3) * dot / d,)
    return apply_op("normalize_latent", out, (z,), bwd)


def instance_norm(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Per-(sample, channel) zero-mean unit-std over HxW.

    The std itself divides (floored at eps), not sqrt(var + eps), so
    non-degenerate channels come out with std exactly 1; constant
    channels map to exactly 0.
    """
    if x.data.ndim != 4:
        raise TensorError("instance_norm expects [B,C,H,W]")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    sigma = np.sqrt((xc ** 2).mean(axis=(2, 3), keepdims=True))
    s = np.maximum(sigma, eps)
    xhat = xc / s
    live = sigma > eps

    def bwd(g, needs):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gx = (g - gm) / s
        proj = (g * xhat).mean(axis=(2, 3), keepdims=True)
        gx = gx - np.where(live, xhat * proj / s, 0.0)
        return (gx,)
    return apply_op("instance_norm", xhat, (x,), bwd)


def modulate(xhat: Tensor, sb: Tensor) -> Tensor:
    """Channel affine from a fused [B,2C] style: x*(1+s) + t."""
    bs, c = xhat.data.shape[:2]
    if sb.data.shape != (bs, 2 * c):
        raise TensorError(f"modulate style shape {sb.data.shape} != {(bs, 2 * c)}")
    s = sb.data[:, :c][:, :, None, None]
    t = sb.data[:, c:][:, :, None, None]
    out = xhat.data * (1.0 + s) + t

    def bwd(g, needs):
        gx = g * (1.0 + s) if needs[0] else None
        if needs[1]:
            gs = (g * xhat.data).sum(axis=(2, 3))
            gt = g.sum(axis=(2, 3))
            gsb = np.concatenate([gs, gt], axis=1)
        else:
            gsb = None
        return (gx, gsb)
    return apply_op("modulate", out, (xhat, sb), bwd)


def add_scaled_noise(x: Tensor, scale: Tensor, noise: np.ndarray) -> Tensor:
    """x + noise * per-channel scale; noise is [B,1,H,W] and not trained."""
    bs, c, h, w = x.data.shape
    if noise.shape != (bs, 1, h, w):
        raise TensorError(f"noise shape {noise.shape} != {(bs, 1, h, w)}")
    if scale.data.shape != (c,):
        raise TensorError(f"noise scale shape {scale.data.shape} != ({c},)")
    out = x.data + noise * scale.data[None, :, None, None]

    def bwd(g, needs):
        gs = np.einsum("bchw,bqhw->c", g, noise, optimize=True) \
            if needs[1] else None
        return (g, gs)
    return apply_op("add_scaled_noise", out, (x, scale), bwd)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: Tensor) -> Tensor:
    """log(1+exp(x)) computed without overflow."""
    out = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    sig = _sigmoid(x.data)
    return apply_op("softplus", out, (x,),
                    lambda g, needs: (g * sig,))


def gan_losses(real_logits: Tensor, fake_logits: Tensor) -> tuple[Tensor, Tensor]:
    """Non-saturating logistic losses.

    d_loss = mean(softplus(-real) + softplus(fake));
    g_loss = mean(softplus(-fake)).
    """
    d_loss = add(mean_all(softplus(mul(real_logits, -1.0))),
                 mean_all(softplus(fake_logits)))
    g_loss = mean_all(softplus(mul(fake_logits, -1.0)))
    return d_loss, g_loss


def cross_entropy(logits: Tensor, target_idx: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy against integer class targets."""
    if logits.data.ndim != 2:
        raise TensorError("cross_entropy expects [B,K] logits")
    bs = logits.data.shape[0]
    idx = np.asarray(target_idx, dtype=np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    lse = np.log(ez.sum(axis=1))
    loss = (lse - z[np.arange(bs), idx]).mean()
    p = ez / ez.sum(axis=1, keepdims=True)

    def bwd(g, needs):
        gi = p.copy()
        gi[np.arange(bs), idx] -= 1.0
        return (gi * (g / bs),)
    return apply_op("cross_entropy", np.asarray(loss), (logits,), bwd)


def r1_penalty(d_out: Tensor, real_images: Tensor, gamma: float = 10.0) -> Tensor:
    """(gamma/2) * mean_b ||d D/d x_b||^2, differentiable w.r.t. the
    discriminator parameters.

    Requires an active tape on which ``d_out`` was computed from
    ``real_images`` with ``requires_grad`` set.
    """
    tape = current_tape()
    if tape is None or d_out.node_id == -1:
        raise TapeError("r1_penalty needs d_out recorded on an active tape")
    bs = real_images.data.shape[0]
    (gx,) = tape.grad_tensors(sum_all(d_out), [real_images])
    return mul(sum_all(square(gx)), gamma / (2.0 * bs))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between the tape gradient of scalar f(x) and
    central finite differences, denominator max(|a|,|b|,1e-8)."""
    old_req = x.requires_grad
    x.requires_grad = True
    try:
        with Tape() as tape:
            y = f(x)
            if y.data.size != 1:
                raise TensorError("grad_check needs a scalar-valued f")
            (analytic,) = tape.grad(y, [x])
    finally:
        x.requires_grad = old_req

    flat = x.data.reshape(-1)
    aflat = analytic.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data)
        flat[i] = orig - h
        fm = float(f(x).data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError("grad_check: f evaluated non-finite")
        num = (fp - fm) / (2.0 * h)
        rel = abs(num - aflat[i]) / max(abs(num), abs(aflat[i]), 1e-8)
        worst = max(worst, rel)
    return worst

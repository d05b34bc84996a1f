"""Differentiable ops on :class:`Tensor`.

Every op computes its forward pass eagerly with numpy and registers a
backward closure. Shapes follow the NCHW convention.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .tensor import Tensor

# upper bound on im2col buffer elements per chunk
_COL_BUDGET = 1 << 25


def _pair_padding(padding, kh: int, kw: int, stride: int) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        if stride != 1:
            raise ValueError("'same' padding requires stride 1")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("'same' padding requires odd kernel sizes")
        return (kh - 1) // 2, (kw - 1) // 2
    p = int(padding)
    if p < 0:
        raise ValueError(f"negative padding {padding}")
    return p, p


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(c * kh * kw, n * ho * wo)


def _col2im_add(dxp: np.ndarray, dcols: np.ndarray, kh: int, kw: int, stride: int,
                ho: int, wo: int) -> None:
    n, c = dxp.shape[:2]
    dcols = dcols.reshape(c, kh, kw, n, ho, wo)
    dt = dxp.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            dt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]


def _use_fft(c: int, k: int, stride: int) -> bool:
    # FFT wins once the kernel and channel count are large enough to amortize transforms
    return stride == 1 and k >= 5 and c >= 8


def _fft_conv(x: np.ndarray, w: np.ndarray, pad: tuple[int, int], ho: int, wo: int):
    """Cross-correlation via real 2-D FFTs in a (H, W, N, C) layout.

    Channel mixing becomes one batched matmul over frequency bins. Returns
    the [N, K, ho, wo] output and the spectra needed by the backward pass.
    """
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    # long enough that neither the input support nor the padded output range wraps
    lh = sfft.next_fast_len(max(h, ho) + kh, real=True)
    lw = sfft.next_fast_len(max(wd, wo) + kw, real=True)
    nf = lh * (lw // 2 + 1)
    xf = sfft.rfftn(x.transpose(2, 3, 0, 1), s=(lh, lw), axes=(0, 1))
    wf = sfft.rfftn(w.transpose(2, 3, 1, 0), s=(lh, lw), axes=(0, 1))
    yf = np.matmul(xf.reshape(nf, n, c), np.conj(wf).reshape(nf, c, k))
    z = sfft.irfftn(yf.reshape(lh, lw // 2 + 1, n, k), s=(lh, lw), axes=(0, 1))
    rows = (np.arange(ho) - pad[0]) % lh
    cols = (np.arange(wo) - pad[1]) % lw
    out = np.ascontiguousarray(z[rows[:, None], cols[None, :]].transpose(2, 3, 0, 1))
    return out, (xf, wf, lh, lw, rows, cols)


def _fft_conv_backward(g: np.ndarray, x_shape, w_shape, cache, need_x: bool, need_w: bool):
    xf, wf, lh, lw, rows, cols = cache
    n, c, h, wd = x_shape
    k, _, kh, kw = w_shape
    nf = lh * (lw // 2 + 1)
    gz = np.zeros((lh, lw, n, k), dtype=g.dtype)
    gz[rows[:, None], cols[None, :]] = g.transpose(2, 3, 0, 1)
    gf = sfft.rfftn(gz, axes=(0, 1)).reshape(nf, n, k)
    del gz
    dx = dw = None
    if need_x:
        dxf = np.matmul(gf, wf.reshape(nf, c, k).transpose(0, 2, 1))
        dx = sfft.irfftn(dxf.reshape(lh, lw // 2 + 1, n, c), s=(lh, lw), axes=(0, 1))[:h, :wd]
        dx = np.ascontiguousarray(dx.transpose(2, 3, 0, 1))
    if need_w:
        dwf = np.matmul(np.conj(gf).transpose(0, 2, 1), xf.reshape(nf, n, c))
        dw = sfft.irfftn(dwf.reshape(lh, lw // 2 + 1, k, c), s=(lh, lw), axes=(0, 1))[:kh, :kw]
        dw = np.ascontiguousarray(dw.transpose(2, 3, 0, 1))
    return dx, dw


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding="valid", method: str = "auto") -> Tensor:
    """2-D cross-correlation. ``padding`` is ``"same"``, ``"valid"`` or an int.

    ``method`` selects ``"im2col"`` (unfold + matmul), ``"fft"`` (stride 1
    only) or ``"auto"``.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    k, wc, kh, kw = weight.shape
    if wc != c:
        raise ValueError(f"conv2d channel mismatch: input has {c}, weight expects {wc}")
    if bias is not None and bias.shape != (k,):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({k},)")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ph, pw = _pair_padding(padding, kh, kw, stride)
    hp, wp = h + 2 * ph, w + 2 * pw
    if kh > hp or kw > wp:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    if method == "auto":
        method = "fft" if _use_fft(c, max(kh, kw), stride) else "im2col"
    if method == "fft":
        if stride != 1:
            raise ValueError("fft convolution requires stride 1")
        return _conv2d_fft(x, weight, bias, (ph, pw), ho, wo)
    if method != "im2col":
        raise ValueError(f"unknown conv method {method!r}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    wm = weight.data.reshape(k, -1)
    chunk = max(1, _COL_BUDGET // max(1, c * kh * kw * ho * wo))

    out = np.empty((k, n, ho, wo), dtype=np.result_type(x.data, weight.data))
    for n0 in range(0, n, chunk):
        n1 = min(n, n0 + chunk)
        cols = _im2col(xp[n0:n1], kh, kw, stride, ho, wo)
        out[:, n0:n1] = (wm @ cols).reshape(k, n1 - n0, ho, wo)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    if bias is not None:
        out += bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray) -> None:
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        gt = g.transpose(1, 0, 2, 3)
        dw = np.zeros_like(wm) if weight.requires_grad else None
        dxp = np.zeros_like(xp) if x.requires_grad else None
        for n0 in range(0, n, chunk):
            n1 = min(n, n0 + chunk)
            gm = gt[:, n0:n1].reshape(k, -1)
            if dw is not None:
                cols = _im2col(xp[n0:n1], kh, kw, stride, ho, wo)
                dw += gm @ cols.T
                del cols
            if dxp is not None:
                _col2im_add(dxp[n0:n1], wm.T @ gm, kh, kw, stride, ho, wo)
        if dw is not None:
            weight.accumulate(dw.reshape(weight.shape))
        if dxp is not None:
            x.accumulate(np.ascontiguousarray(dxp[:, :, ph:ph + h, pw:pw + w]))

    return Tensor.from_op(out, parents, backward)


def _conv2d_fft(x: Tensor, weight: Tensor, bias: Tensor | None, pad: tuple[int, int],
                ho: int, wo: int) -> Tensor:
    dtype = np.result_type(x.data, weight.data)
    out, cache = _fft_conv(x.data, weight.data, pad, ho, wo)
    out = out.astype(dtype, copy=False)
    if bias is not None:
        out += bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray) -> None:
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        dx, dw = _fft_conv_backward(g, x.shape, weight.shape, cache, x.requires_grad,
                                    weight.requires_grad)
        if dx is not None:
            x.accumulate(dx.astype(x.dtype, copy=False))
        if dw is not None:
            weight.accumulate(dw.astype(weight.dtype, copy=False))

    return Tensor.from_op(out, parents, backward)


def max_pool2d(x: Tensor, window: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Max pooling with floor output size; gradient goes to the first maximum."""
    stride = window if stride is None else stride
    n, c, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if window > hp or window > wp:
        raise ValueError(f"pool window {window} larger than input {h}x{w}")
    ho = (hp - window) // stride + 1
    wo = (wp - window) // stride + 1
    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=-np.inf)

    if stride == window and padding == 0:
        # non-overlapping fast path
        v = xd[:, :, :ho * window, :wo * window].reshape(n, c, ho, window, wo, window)
        v = v.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, window * window)
    else:
        v = np.lib.stride_tricks.sliding_window_view(xd, (window, window), axis=(2, 3))
        v = v[:, :, ::stride, ::stride][:, :, :ho, :wo].reshape(n, c, ho, wo, window * window)
    idx = v.argmax(axis=-1)
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray) -> None:
        di, dj = np.divmod(idx, window)
        rows = np.arange(ho)[None, None, :, None] * stride + di
        cols = np.arange(wo)[None, None, None, :] * stride + dj
        dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
        nn_ = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        if stride >= window:
            dxp[nn_, cc, rows, cols] = g
        else:
            np.add.at(dxp, (nn_, cc, rows, cols), g)
        x.accumulate(dxp[:, :, padding:padding + h, padding:padding + w].copy())

    return Tensor.from_op(np.ascontiguousarray(out), (x,), backward)


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                 running_var: np.ndarray, training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization.

    In training mode the running statistics are updated in place (unbiased
    variance, as is conventional).
    """
    n, c, h, w = x.shape
    shape = (1, c, 1, 1)
    if not training:
        scale = gamma.data / np.sqrt(running_var + eps)
        shift = beta.data - running_mean * scale
        xd = x.data
        out = xd * scale.reshape(shape).astype(xd.dtype) + shift.reshape(shape).astype(xd.dtype)

        def backward_eval(g: np.ndarray) -> None:
            inv = (1.0 / np.sqrt(running_var + eps)).reshape(shape)
            xhat = (xd - running_mean.reshape(shape)) * inv
            gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)).astype(gamma.dtype))
            beta.accumulate(g.sum(axis=(0, 2, 3)))
            x.accumulate((g * scale.reshape(shape)).astype(g.dtype))

        return Tensor.from_op(out, (x, gamma, beta), backward_eval)

    m = n * h * w
    if m < 2:
        raise ValueError("batch norm in training mode needs more than one value per channel")
    mean = x.data.mean(axis=(0, 2, 3))
    xc = x.data - mean.reshape(shape)
    var = (xc * xc).mean(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    running_mean *= 1.0 - momentum
    running_mean += momentum * mean
    running_var *= 1.0 - momentum
    running_var += momentum * var * (m / (m - 1))

    def backward(g: np.ndarray) -> None:
        gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        beta.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx = g * gamma.data.reshape(shape)
            mean_g = gx.mean(axis=(0, 2, 3)).reshape(shape)
            mean_gx = (gx * xhat).mean(axis=(0, 2, 3)).reshape(shape)
            x.accumulate((gx - mean_g - xhat * mean_gx) * inv_std.reshape(shape))

    return Tensor.from_op(out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = x.data * mask

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return Tensor.from_op(out, (x,), backward)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit random generator")
    keep = rng.random(x.shape) >= p
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    mask = keep * scale

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return Tensor.from_op(x.data * mask, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with weight shaped [in, out]."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"linear shape mismatch: {x.shape} @ {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ValueError(f"linear bias shape {bias.shape} != ({weight.shape[1]},)")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(g @ weight.data.T)
        if weight.requires_grad:
            weight.accumulate(x.data.T @ g)
        if bias is not None:
            bias.accumulate(g.sum(axis=0))

    return Tensor.from_op(out, parents, backward)


def flatten(x: Tensor) -> Tensor:
    shape = x.shape

    def backward(g: np.ndarray) -> None:
        x.accumulate(g.reshape(shape))

    return Tensor.from_op(x.data.reshape(shape[0], -1), (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")

    def backward(g: np.ndarray) -> None:
        a.accumulate(g)
        b.accumulate(g)

    return Tensor.from_op(a.data + b.data, (a, b), backward)


def global_avg_pool2d(x: Tensor) -> Tensor:
    n, c, h, w = x.shape

    def backward(g: np.ndarray) -> None:
        x.accumulate(np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy())

    return Tensor.from_op(x.data.mean(axis=(2, 3)), (x,), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def weighted_softmax_cross_entropy(logits: Tensor, targets, weights) -> Tensor:
    """Class-weighted cross entropy, normalized by the sum of sample weights.

    loss = sum_i w[y_i] * -log softmax(logits_i)[y_i] / sum_i w[y_i]
    """
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=logits.dtype)
    n, k = logits.shape
    if targets.shape != (n,):
        raise ValueError(f"expected {n} targets, got shape {targets.shape}")
    if weights.shape != (k,):
        raise ValueError(f"expected {k} class weights, got shape {weights.shape}")
    if n and (targets.min() < 0 or targets.max() >= k):
        raise ValueError(f"target index out of range [0, {k})")
    logp = log_softmax(logits.data)
    sample_w = weights[targets]
    total_w = sample_w.sum()
    rows = np.arange(n)
    loss = -(sample_w * logp[rows, targets]).sum() / total_w

    def backward(g: np.ndarray) -> None:
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        d *= (sample_w / total_w)[:, None]
        logits.accumulate(d * g)

    return Tensor.from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward)

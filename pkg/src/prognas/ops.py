"""Differentiable network primitives: convolution, pooling, batch norm, losses.

All image tensors are NCHW. Convolution and pooling share one im2col-style
patch extraction; kernels are small (1/3/5) so looping over kernel offsets
vectorizes well under numpy.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _out_size(n: int, k: int, stride: int, pad: int, dilation: int) -> int:
    # floor((n + 2 pad - dilation (k - 1) - 1) / stride) + 1
    eff = dilation * (k - 1) + 1
    return (n + 2 * pad - eff) // stride + 1


def _check_spatial(name: str, n: int, k: int, stride: int, pad: int, dilation: int) -> None:
    eff = dilation * (k - 1) + 1
    if n + 2 * pad < eff:
        raise ValueError(
            f"{name}: spatial dim {n} with padding {pad} is smaller than the "
            f"effective kernel extent {eff}")
    if stride < 1:
        raise ValueError(f"{name}: stride must be >= 1, got {stride}")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int,
            dilation: int, pad_value: float = 0.0):
    """Extract sliding windows as a contiguous [N, C, KH, KW, Ho, Wo] array."""
    n, c, h, w = x.shape
    ho = _out_size(h, kh, stride, pad, dilation)
    wo = _out_size(w, kw, stride, pad, dilation)
    if pad > 0:
        xp = np.full((n, c, h + 2 * pad, w + 2 * pad), pad_value, dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    effh = dilation * (kh - 1) + 1
    effw = dilation * (kw - 1) + 1
    v = np.lib.stride_tricks.sliding_window_view(xp, (effh, effw), axis=(2, 3))
    v = v[:, :, ::stride, ::stride, ::dilation, ::dilation]
    return np.ascontiguousarray(v.transpose(0, 1, 4, 5, 2, 3)), ho, wo


def _col2im(cols: np.ndarray, x_shape: tuple[int, ...], stride: int, pad: int,
            dilation: int) -> np.ndarray:
    """Scatter-add window gradients back to the (unpadded) input."""
    n, c, h, w = x_shape
    _, _, kh, kw, ho, wo = cols.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        hi = i * dilation
        for j in range(kw):
            wi = j * dilation
            xp[:, :, hi:hi + ho * stride:stride,
               wi:wi + wo * stride:stride] += cols[:, :, i, j]
    if pad > 0:
        return xp[:, :, pad:pad + h, pad:pad + w]
    return xp


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0,
           dilation: int = 1, groups: int = 1) -> Tensor:
    """Grouped 2-D convolution, no bias. Weight shape [Cout, Cin/groups, KH, KW]."""
    if x.data.ndim != 4:
        raise ValueError(f"conv2d: input must be NCHW, got {x.data.ndim} dims")
    if w.data.ndim != 4:
        raise ValueError(f"conv2d: weight must be 4-D, got {w.data.ndim} dims")
    n, cin, h, wdt = x.shape
    cout, cin_g, kh, kw = w.shape
    if cin % groups or cout % groups:
        raise ValueError(
            f"conv2d: channel counts ({cin} in, {cout} out) must be divisible "
            f"by groups={groups}")
    if cin_g != cin // groups:
        raise ValueError(
            f"conv2d: weight expects {cin_g} input channels per group, input "
            f"provides {cin // groups}")
    _check_spatial("conv2d(H)", h, kh, stride, padding, dilation)
    _check_spatial("conv2d(W)", wdt, kw, stride, padding, dilation)

    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding, dilation)
    kdim = (cin // groups) * kh * kw
    # [N, G, Ci*KH*KW, Ho*Wo] x [G, Co/G, Ci*KH*KW] via broadcasted matmul
    cols_m = cols.reshape(n, groups, kdim, ho * wo)
    w_m = w.data.reshape(groups, cout // groups, kdim)
    out = np.matmul(w_m[None], cols_m)
    out = np.ascontiguousarray(out.reshape(n, cout, ho, wo))

    def backward(g: np.ndarray) -> None:
        g_m = g.reshape(n, groups, cout // groups, ho * wo)
        if w.requires_grad:
            gw = np.matmul(g_m, cols_m.transpose(0, 1, 3, 2)).sum(axis=0)
            w._accumulate(gw.reshape(w.shape))
        if x.requires_grad:
            gcols = np.matmul(w_m.transpose(0, 2, 1)[None], g_m)
            gcols = gcols.reshape(n, cin, kh, kw, ho, wo)
            x._accumulate(_col2im(gcols, x.shape, stride, padding, dilation))

    return Tensor._make(out, (x, w), backward)


def pool2d(x: Tensor, kind: str, k: int = 3, stride: int = 1, padding: int = 1) -> Tensor:
    """3x3 max/average pooling. Average excludes padded positions from the count;
    max routes the gradient to the first (lowest flat index) maximum."""
    if kind not in ("max", "avg"):
        raise ValueError(f"pool2d: kind must be 'max' or 'avg', got {kind!r}")
    if k != 3:
        raise ValueError(f"pool2d: unsupported kernel size {k} (only 3 supported)")
    if padding < 0 or padding >= k:
        raise ValueError(f"pool2d: padding must be in [0, {k}), got {padding}")
    n, c, h, w = x.shape
    _check_spatial("pool2d(H)", h, k, stride, padding, 1)
    _check_spatial("pool2d(W)", w, k, stride, padding, 1)

    if kind == "max":
        neg = np.finfo(x.data.dtype).min
        cols, ho, wo = _im2col(x.data, k, k, stride, padding, 1, pad_value=neg)
        flat = cols.reshape(n, c, k * k, ho, wo)
        arg = flat.argmax(axis=2)  # first index on ties
        out = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]

        def backward(g: np.ndarray) -> None:
            gcols = np.zeros_like(flat)
            np.put_along_axis(gcols, arg[:, :, None], g[:, :, None], axis=2)
            x._accumulate(_col2im(gcols.reshape(cols.shape), x.shape,
                                  stride, padding, 1))

        return Tensor._make(np.ascontiguousarray(out), (x,), backward)

    cols, ho, wo = _im2col(x.data, k, k, stride, padding, 1)
    ones = np.ones((1, 1, h, w), dtype=x.data.dtype)
    counts, _, _ = _im2col(ones, k, k, stride, padding, 1)
    counts = counts.sum(axis=(2, 3))  # [1, 1, Ho, Wo] real elements per window
    out = cols.sum(axis=(2, 3)) / counts

    def backward(g: np.ndarray) -> None:
        gc = g / counts
        gcols = np.broadcast_to(gc[:, :, None, None], (n, c, k, k, ho, wo))
        x._accumulate(_col2im(np.ascontiguousarray(gcols), x.shape,
                              stride, padding, 1))

    return Tensor._make(np.ascontiguousarray(out), (x,), backward)


def batch_norm(x: Tensor, weight: Tensor | None, bias: Tensor | None,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes with batch statistics and folds them into the
    running buffers (biased variance, momentum-weighted); inference mode uses
    the running buffers only. `weight`/`bias` are None when affine is off.
    """
    if eps <= 0:
        raise ValueError(f"batch_norm: eps must be > 0, got {eps}")
    if x.data.ndim != 4:
        raise ValueError(f"batch_norm: input must be NCHW, got {x.data.ndim} dims")
    n, c, h, w = x.shape
    m = n * h * w
    if m == 0:
        raise ValueError("batch_norm: zero-element channel")
    axes = (0, 2, 3)

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
    out = xhat
    if weight is not None:
        out = out * weight.data[None, :, None, None]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = out.astype(x.data.dtype)

    parents = [x] + [t for t in (weight, bias) if t is not None]

    def backward(g: np.ndarray) -> None:
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=axes))
        if weight is not None and weight.requires_grad:
            weight._accumulate((g * xhat).sum(axis=axes))
        if x.requires_grad:
            gy = g if weight is None else g * weight.data[None, :, None, None]
            if training:
                gm = gy.mean(axis=axes)
                gxh = (gy * xhat).mean(axis=axes)
                gx = inv[None, :, None, None] * (
                    gy - gm[None, :, None, None] - xhat * gxh[None, :, None, None])
            else:
                gx = gy * inv[None, :, None, None]
            x._accumulate(gx.astype(x.data.dtype))

    return Tensor._make(out, tuple(parents), backward)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map: x [N, D] @ w [D, K] (+ b [K])."""
    if x.data.ndim != 2:
        raise ValueError(f"dense: input must be 2-D, got {x.data.ndim} dims")
    if x.shape[1] != w.shape[0]:
        raise ValueError(
            f"dense: input features {x.shape[1]} do not match weight rows {w.shape[0]}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    parents = [x, w] + ([b] if b is not None else [])

    def backward(g: np.ndarray) -> None:
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=0))
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if x.requires_grad:
            x._accumulate(g @ w.data.T)

    return Tensor._make(out, tuple(parents), backward)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    if logits.data.ndim != 2:
        raise ValueError(f"cross_entropy: logits must be [batch, K], got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(
            f"cross_entropy: labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        bad = int(np.argmax((labels < 0) | (labels >= k)))
        raise ValueError(
            f"cross_entropy: label {labels[bad]} at index {bad} outside [0, {k})")
    ls = log_softmax(logits.data)
    loss = np.asarray(-ls[np.arange(n), labels].mean(), dtype=logits.data.dtype)

    def backward(g: np.ndarray) -> None:
        p = np.exp(ls)
        p[np.arange(n), labels] -= 1.0
        logits._accumulate(g * p / n)

    return Tensor._make(loss, (logits,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """NCHW -> [N, C] spatial mean."""
    from .tensor import tmean
    return tmean(x, (2, 3))


def shift2d(x: Tensor, dr: int, dc: int) -> Tensor:
    """Crop the top-left corner: x[:, :, dr:, dc:] (factorized downsample path)."""
    data = x.data[:, :, dr:, dc:]

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(x.data)
        gx[:, :, dr:, dc:] = g
        x._accumulate(gx)

    return Tensor._make(np.ascontiguousarray(data), (x,), backward)

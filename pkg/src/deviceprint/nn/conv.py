"""3D convolution and pooling with exact hand-written backward passes.

Tensors are laid out [batch, channels, time, height, width]. Kernels are
[out_channels, in_channels, kT, kH, kW]. Every output extent follows
floor((in + 2 pad - k) / stride) + 1.
"""

import numpy as np

from ..errors import ShapeError
from .params import uniform_fanin


def _triple(v):
    if np.isscalar(v):
        return (int(v),) * 3
    t = tuple(int(i) for i in v)
    if len(t) != 3:
        raise ShapeError("stride/padding/window must be scalar or length 3")
    return t


def _out_extent(n, k, s, p):
    o = (n + 2 * p - k) // s + 1
    if o < 1:
        raise ShapeError(f"kernel/window of {k} does not fit extent {n} "
                         f"with stride {s}, padding {p}")
    return o


def _pad5(x, pads):
    if not any(pads):
        return x
    pt, ph, pw = pads
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))


def conv3d_forward(x, kernel, bias, stride=1, padding=0):
    """Linear 3D cross-correlation plus bias (activation applied elsewhere)."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 5 or kernel.ndim != 5:
        raise ShapeError("conv3d expects 5-D input and kernel")
    if x.shape[1] != kernel.shape[1] or bias.shape != (kernel.shape[0],):
        raise ShapeError("channel counts of input, kernel and bias disagree")
    stride, padding = _triple(stride), _triple(padding)
    xp = _pad5(x, padding)
    _, _, kt, kh, kw = kernel.shape
    ot = _out_extent(x.shape[2], kt, stride[0], padding[0])
    oh = _out_extent(x.shape[3], kh, stride[1], padding[1])
    ow = _out_extent(x.shape[4], kw, stride[2], padding[2])
    out = np.zeros((x.shape[0], kernel.shape[0], ot, oh, ow))
    st, sh, sw = stride
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                xs = xp[:, :,
                        dt:dt + ot * st:st,
                        dh:dh + oh * sh:sh,
                        dw:dw + ow * sw:sw]
                contrib = np.tensordot(xs, kernel[:, :, dt, dh, dw],
                                       axes=([1], [1]))
                out += np.moveaxis(contrib, -1, 1)
    return out + bias.reshape(1, -1, 1, 1, 1)


def conv3d_backward(grad_out, x, kernel, stride=1, padding=0):
    """Exact gradients of conv3d_forward w.r.t. input, kernel and bias."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    stride, padding = _triple(stride), _triple(padding)
    xp = _pad5(x, padding)
    _, _, kt, kh, kw = kernel.shape
    _, _, ot, oh, ow = grad_out.shape
    st, sh, sw = stride
    grad_k = np.zeros_like(kernel)
    grad_xp = np.zeros_like(xp)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                sl = (slice(None), slice(None),
                      slice(dt, dt + ot * st, st),
                      slice(dh, dh + oh * sh, sh),
                      slice(dw, dw + ow * sw, sw))
                grad_k[:, :, dt, dh, dw] = np.tensordot(
                    grad_out, xp[sl], axes=([0, 2, 3, 4], [0, 2, 3, 4]))
                spread = np.tensordot(grad_out, kernel[:, :, dt, dh, dw],
                                      axes=([1], [0]))
                grad_xp[sl] += np.moveaxis(spread, -1, 1)
    pt, ph, pw = padding
    grad_x = grad_xp[:, :,
                     pt:pt + x.shape[2],
                     ph:ph + x.shape[3],
                     pw:pw + x.shape[4]]
    return grad_x, grad_k, grad_out.sum(axis=(0, 2, 3, 4))


def _pool_windows(x, window, stride):
    """Stack every in-window shift as a trailing axis: (..., wT*wH*wW)."""
    wt, wh, ww = window
    st, sh, sw = stride
    ot = _out_extent(x.shape[2], wt, st, 0)
    oh = _out_extent(x.shape[3], wh, sh, 0)
    ow = _out_extent(x.shape[4], ww, sw, 0)
    slabs = []
    for dt in range(wt):
        for dh in range(wh):
            for dw in range(ww):
                slabs.append(x[:, :,
                               dt:dt + ot * st:st,
                               dh:dh + oh * sh:sh,
                               dw:dw + ow * sw:sw])
    return np.stack(slabs, axis=-1)


def _pool_offsets(window):
    wt, wh, ww = window
    return [(dt, dh, dw)
            for dt in range(wt) for dh in range(wh) for dw in range(ww)]


def maxpool3d(x, window, stride=None):
    """Per-window maximum; stride defaults to the window (no overlap)."""
    window = _triple(window)
    stride = _triple(stride) if stride is not None else window
    return _pool_windows(np.asarray(x, dtype=np.float64), window, stride).max(axis=-1)


def maxpool3d_backward(grad_out, x, window, stride=None):
    """Route each window's gradient to its argmax (first index on ties)."""
    window = _triple(window)
    stride = _triple(stride) if stride is not None else window
    x = np.asarray(x, dtype=np.float64)
    windows = _pool_windows(x, window, stride)
    winner = windows.argmax(axis=-1)
    grad_x = np.zeros_like(x)
    st, sh, sw = stride
    _, _, ot, oh, ow = grad_out.shape
    for k, (dt, dh, dw) in enumerate(_pool_offsets(window)):
        mask = winner == k
        grad_x[:, :,
               dt:dt + ot * st:st,
               dh:dh + oh * sh:sh,
               dw:dw + ow * sw:sw] += grad_out * mask
    return grad_x


def avgpool3d(x, window, stride=None):
    """Per-window arithmetic mean; stride defaults to the window."""
    window = _triple(window)
    stride = _triple(stride) if stride is not None else window
    return _pool_windows(np.asarray(x, dtype=np.float64), window, stride).mean(axis=-1)


def avgpool3d_backward(grad_out, x, window, stride=None):
    window = _triple(window)
    stride = _triple(stride) if stride is not None else window
    x = np.asarray(x, dtype=np.float64)
    share = grad_out / (window[0] * window[1] * window[2])
    grad_x = np.zeros_like(x)
    st, sh, sw = stride
    _, _, ot, oh, ow = grad_out.shape
    for dt, dh, dw in _pool_offsets(window):
        grad_x[:, :,
               dt:dt + ot * st:st,
               dh:dh + oh * sh:sh,
               dw:dw + ow * sw:sw] += share
    return grad_x


class Conv3d:
    """Convolution layer owning its kernel and bias parameters."""

    def __init__(self, store, name, c_in, c_out, kernel, stride=1, padding=0,
                 rng=None):
        kernel = _triple(kernel) if np.isscalar(kernel) else tuple(kernel)
        fan_in = c_in * int(np.prod(kernel))
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = store.add(f"{name}.w",
                           uniform_fanin(rng, (c_out, c_in) + kernel, fan_in))
        self.b = store.add(f"{name}.b", np.zeros(c_out))
        self.stride = _triple(stride)
        self.padding = _triple(padding)
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        return conv3d_forward(x, self.w.value, self.b.value,
                              self.stride, self.padding)

    def backward(self, grad_out):
        grad_x, grad_k, grad_b = conv3d_backward(
            grad_out, self._x, self.w.value, self.stride, self.padding)
        self.w.grad += grad_k
        self.b.grad += grad_b
        return grad_x


class MaxPool3d:
    def __init__(self, window, stride=None):
        self.window = _triple(window)
        self.stride = _triple(stride) if stride is not None else self.window
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        return maxpool3d(x, self.window, self.stride)

    def backward(self, grad_out):
        return maxpool3d_backward(grad_out, self._x, self.window, self.stride)


class AvgPool3d:
    def __init__(self, window, stride=None):
        self.window = _triple(window)
        self.stride = _triple(stride) if stride is not None else self.window
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        return avgpool3d(x, self.window, self.stride)

    def backward(self, grad_out):
        return avgpool3d_backward(grad_out, self._x, self.window, self.stride)

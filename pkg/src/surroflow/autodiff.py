"""Reverse-mode automatic differentiation on dense float64 tensors.

Operations record onto an explicit :class:`Tape`.  Calling an op with
``tape=None`` evaluates forward only, which is what inference and
finite-difference probes use.  ``Tape.backward`` walks the recorded nodes
in exact reverse order and accumulates gradients into ``Tensor.grad``.
Second-order derivatives are out of scope: a tape can be walked once.
"""

from __future__ import annotations

import struct

import numpy as np
from scipy.special import expit


class Tensor:
    """Value node. ``data`` is a float64 ndarray, ``grad`` is filled lazily."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self, capture_relu_masks=False):
        self._nodes = []
        self._used = False
        # When set, relu() appends its input sign pattern here.  Gradient
        # checks compare patterns between perturbed evaluations to skip
        # entries that straddle a kink.
        self.capture_relu_masks = capture_relu_masks
        self.relu_masks = []

    def record(self, out, parents, backward_fn):
        self._nodes.append((out, parents, backward_fn))

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        """Accumulate d(loss)/d(node) into every recorded tensor's ``grad``."""
        if self._used:
            raise RuntimeError("tape already walked backward; build a new tape")
        self._used = True
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, parents, backward_fn in reversed(self._nodes):
            if out.grad is None:
                continue
            gs = backward_fn(out.grad)
            for parent, g in zip(parents, gs):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g


def _accum_setup(x):
    if not isinstance(x, Tensor):
        raise TypeError(f"expected Tensor, got {type(x).__name__}")
    return x


# ---------------------------------------------------------------------------
# im2col / col2im plumbing shared by conv2d and its transpose
# ---------------------------------------------------------------------------

def _conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _im2col(x, kh, kw, stride, pad):
    """(n, c, h, w) -> (n, c*kh*kw, ho*wo) patch matrix."""
    n, c, h, w = x.shape
    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(n, c * kh * kw, ho * wo), ho, wo


def _col2im(cols, x_shape, kh, kw, stride, pad, ho, wo):
    """Adjoint of _im2col: scatter-add patches back onto the image."""
    n, c, h, w = x_shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    for a in range(kh):
        for b in range(kw):
            xp[:, :, a : a + stride * ho : stride, b : b + stride * wo : stride] += cols[:, :, a, b]
    if pad == 0:
        return xp
    return xp[:, :, pad : pad + h, pad : pad + w]


def _check_4d(x, what):
    if x.data.ndim != 4:
        raise ValueError(f"{what} must be 4-d (n, c, h, w), got shape {x.data.shape}")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def conv2d(tape, x, w, b=None, stride=1, pad=1):
    """2-d cross-correlation. ``w`` has shape (c_out, c_in, kh, kw)."""
    _check_4d(x, "conv2d input")
    if w.data.ndim != 4:
        raise ValueError(f"conv2d weight must be 4-d, got shape {w.data.shape}")
    co, ci, kh, kw = w.data.shape
    if x.data.shape[1] != ci:
        raise ValueError(f"conv2d channel mismatch: input has {x.data.shape[1]}, weight expects {ci}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d stride must be 1 or 2, got {stride}")
    n = x.data.shape[0]
    cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    w_flat = w.data.reshape(co, ci * kh * kw)
    out_flat = np.matmul(w_flat, cols)  # (n, co, ho*wo)
    out_data = out_flat.reshape(n, co, ho, wo)
    if b is not None:
        if b.data.shape != (co,):
            raise ValueError(f"conv2d bias must have shape ({co},), got {b.data.shape}")
        out_data = out_data + b.data[None, :, None, None]
    out = Tensor(out_data)
    if tape is not None:
        x_shape = x.data.shape

        def backward_fn(g):
            g_flat = g.reshape(n, co, ho * wo)
            gw = np.einsum("nol,nkl->ok", g_flat, cols).reshape(co, ci, kh, kw)
            gcols = np.matmul(w_flat.T, g_flat)
            gx = _col2im(gcols, x_shape, kh, kw, stride, pad, ho, wo)
            gb = g.sum(axis=(0, 2, 3)) if b is not None else None
            return (gx, gw, gb) if b is not None else (gx, gw)

        parents = (x, w, b) if b is not None else (x, w)
        tape.record(out, parents, backward_fn)
    return out


def conv2d_transpose(tape, x, w, b=None, stride=1, pad=1, out_hw=None):
    """Adjoint of conv2d as a layer. ``w`` has shape (c_in, c_out, kh, kw).

    ``out_hw`` fixes the output size when it is ambiguous; the default
    doubles the input exactly for stride 2 and preserves it for stride 1
    (3x3 kernel, pad 1).
    """
    _check_4d(x, "conv2d_transpose input")
    a, cb, kh, kw = w.data.shape
    if x.data.shape[1] != a:
        raise ValueError(f"conv2d_transpose channel mismatch: input has {x.data.shape[1]}, weight expects {a}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d_transpose stride must be 1 or 2, got {stride}")
    n, _, h, w_in = x.data.shape
    if out_hw is None:
        op = 1 if stride == 2 else 0
        out_hw = (stride * (h - 1) + kh - 2 * pad + op, stride * (w_in - 1) + kw - 2 * pad + op)
    H, W = out_hw
    if _conv_out_size(H, kh, stride, pad) != h or _conv_out_size(W, kw, stride, pad) != w_in:
        raise ValueError(f"conv2d_transpose output size {out_hw} is inconsistent with input {(h, w_in)}")
    w_flat = w.data.reshape(a, cb * kh * kw)
    x_flat = x.data.reshape(n, a, h * w_in)
    cols = np.matmul(w_flat.T, x_flat)  # (n, cb*kh*kw, h*w_in)
    out_data = _col2im(cols, (n, cb, H, W), kh, kw, stride, pad, h, w_in)
    if b is not None:
        if b.data.shape != (cb,):
            raise ValueError(f"conv2d_transpose bias must have shape ({cb},), got {b.data.shape}")
        out_data = out_data + b.data[None, :, None, None]
    out = Tensor(out_data)
    if tape is not None:

        def backward_fn(g):
            gcols, _, _ = _im2col(g, kh, kw, stride, pad)
            gx = np.matmul(w_flat, gcols).reshape(n, a, h, w_in)
            gw = np.einsum("nal,nkl->ak", x_flat, gcols).reshape(a, cb, kh, kw)
            gb = g.sum(axis=(0, 2, 3)) if b is not None else None
            return (gx, gw, gb) if b is not None else (gx, gw)

        parents = (x, w, b) if b is not None else (x, w)
        tape.record(out, parents, backward_fn)
    return out


def batchnorm(tape, x, gamma, beta, running_mean, running_var, mode, momentum=0.9, eps=1e-5):
    """Per-channel batch normalization over (n, h, w).

    ``running_mean`` / ``running_var`` are plain ndarrays updated in place in
    train mode (biased variance, new = momentum*old + (1-momentum)*batch).
    """
    _check_4d(x, "batchnorm input")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError(f"batchnorm gamma/beta must have shape ({c},)")
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train":
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu = running_mean.copy()
        var = running_var.copy()
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = Tensor(gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None])
    if tape is not None:
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]

        def backward_fn(g):
            ggamma = np.einsum("nchw,nchw->c", g, xhat)
            gbeta = g.sum(axis=(0, 2, 3))
            scale_c = (gamma.data * inv_std)[None, :, None, None]
            if mode == "train":
                g_mean = g.mean(axis=(0, 2, 3))[None, :, None, None]
                gx_mean = (ggamma / m)[None, :, None, None]
                gx = scale_c * (g - g_mean - xhat * gx_mean)
            else:
                gx = scale_c * g
            return gx, ggamma, gbeta

        tape.record(out, (x, gamma, beta), backward_fn)
    return out


def relu(tape, x):
    mask = x.data > 0.0
    out = Tensor(np.where(mask, x.data, 0.0))
    if tape is not None:
        if tape.capture_relu_masks:
            tape.relu_masks.append(mask)
        tape.record(out, (x,), lambda g: (g * mask,))
    return out


def sigmoid(tape, x):
    y = expit(x.data)
    out = Tensor(y)
    if tape is not None:
        tape.record(out, (x,), lambda g: (g * y * (1.0 - y),))
    return out


def tanh(tape, x):
    y = np.tanh(x.data)
    out = Tensor(y)
    if tape is not None:
        tape.record(out, (x,), lambda g: (g * (1.0 - y * y),))
    return out


def _check_same_shape(a, b, opname):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{opname} shape mismatch: {a.data.shape} vs {b.data.shape}")


def add(tape, a, b):
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda g: (g, g))
    return out


def sub(tape, a, b):
    _check_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda g: (g, -g))
    return out


def hadamard(tape, a, b):
    _check_same_shape(a, b, "hadamard")
    out = Tensor(a.data * b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda g: (g * b.data, g * a.data))
    return out


def concat_channels(tape, parts):
    """Concatenate 4-d tensors along the channel axis."""
    if len(parts) < 2:
        raise ValueError("concat_channels needs at least two tensors")
    ref = parts[0].data.shape
    for p in parts[1:]:
        _check_4d(p, "concat_channels input")
        if p.data.shape[0] != ref[0] or p.data.shape[2:] != ref[2:]:
            raise ValueError(f"concat_channels mismatch: {p.data.shape} vs {ref}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    if tape is not None:
        sizes = [p.data.shape[1] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def backward_fn(g):
            return tuple(np.split(g, splits, axis=1))

        tape.record(out, tuple(parts), backward_fn)
    return out


def abs_(tape, x):
    out = Tensor(np.abs(x.data))
    if tape is not None:
        sign = np.sign(x.data)
        tape.record(out, (x,), lambda g: (g * sign,))
    return out


def square(tape, x):
    out = Tensor(x.data * x.data)
    if tape is not None:
        tape.record(out, (x,), lambda g: (2.0 * g * x.data,))
    return out


def sum_all(tape, x):
    out = Tensor(x.data.sum())
    if tape is not None:
        shape = x.data.shape
        tape.record(out, (x,), lambda g: (np.broadcast_to(g, shape).copy() if g.shape != shape else g,))
    return out


def scale(tape, x, c):
    c = float(c)
    out = Tensor(x.data * c)
    if tape is not None:
        tape.record(out, (x,), lambda g: (g * c,))
    return out


# ---------------------------------------------------------------------------
# NETP checkpoint format
# ---------------------------------------------------------------------------
#
# Layout: magic "NETP1", u32 tensor count, then per tensor (sorted by name):
# u32 name length, UTF-8 name, 4 x u32 shape, f64 little-endian data.
# Shapes with fewer than four axes are padded with trailing 1s on write;
# readers strip trailing 1s back off (down to one axis), which is lossless
# for every shape this package stores (4-d conv kernels and 1-d vectors).

NETP_MAGIC = b"NETP1"


def netp_write(path, tensors):
    """Write a name->ndarray mapping as a NETP file (names sorted)."""
    with open(path, "wb") as f:
        f.write(NETP_MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
            if arr.ndim == 0 or arr.ndim > 4:
                raise ValueError(f"NETP stores 1-d to 4-d tensors, {name!r} has ndim {arr.ndim}")
            shape4 = arr.shape + (1,) * (4 - arr.ndim)
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<4I", *shape4))
            f.write(arr.astype("<f8").tobytes())


def netp_read(path):
    """Read a NETP file back into a name->ndarray mapping."""
    out = {}
    with open(path, "rb") as f:
        magic = f.read(5)
        if magic != NETP_MAGIC:
            raise ValueError(f"not a NETP file: bad magic {magic!r}")
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            shape4 = struct.unpack("<4I", f.read(16))
            n_items = int(np.prod(shape4))
            data = np.frombuffer(f.read(8 * n_items), dtype="<f8").reshape(shape4)
            shape = list(shape4)
            while len(shape) > 1 and shape[-1] == 1:
                shape.pop()
            out[name] = np.ascontiguousarray(data.reshape(shape))
        trailing = f.read(1)
        if trailing:
            raise ValueError("trailing bytes after last NETP tensor")
    return out

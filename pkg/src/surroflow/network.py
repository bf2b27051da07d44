"""Recurrent residual U-Net: encoder, convolutional LSTM, shared decoder.

The encoder turns the static input (normalized log-permeability + well
mask) into feature maps F_1..F_5.  A convLSTM unrolls the deepest map F_5
over n_t steps, and one shared decoder turns each hidden state into a
full-resolution state map, re-using the encoder skips at every step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad

# Gate-range and finiteness assertions run when this is set (or when the
# debug argument of unroll/forward is passed explicitly).
DEBUG = False

_LSTM_KERNELS = ("w_xf", "w_hf", "w_xi", "w_hi", "w_xo", "w_ho", "w_xc", "w_hc")
_LSTM_BIASES = ("b_f", "b_i", "b_o", "b_c")


@dataclass(frozen=True)
class ArchConfig:
    nx: int
    ny: int
    n_t: int
    base_filters: int = 8
    input_channels: int = 2
    residual_blocks_enc: int = 3
    residual_blocks_dec: int = 3
    final_activation: str = "sigmoid"

    def __post_init__(self):
        if self.nx % 4 != 0 or self.ny % 4 != 0:
            raise ValueError(f"grid ({self.nx}, {self.ny}) must be divisible by 4; pad the input first")
        if self.base_filters < 4:
            raise ValueError("base_filters must be >= 4")
        if self.n_t < 1:
            raise ValueError("n_t must be >= 1")
        if self.input_channels < 1:
            raise ValueError("input_channels must be >= 1")
        if self.final_activation not in ("linear", "sigmoid"):
            raise ValueError(f"final_activation must be 'linear' or 'sigmoid', got {self.final_activation!r}")

    @property
    def channels(self):
        b = self.base_filters
        return (b, 2 * b, 4 * b, 8 * b)

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls(**json.load(f))


def _res_inner(c):
    return max(4, c // 2)


def _conv_layer_shapes(name, c_in, c_out):
    return [
        (f"{name}.w", (c_out, c_in, 3, 3)),
        (f"{name}.b", (c_out,)),
        (f"{name}.bn_g", (c_out,)),
        (f"{name}.bn_b", (c_out,)),
    ]


def _tconv_layer_shapes(name, c_in, c_out):
    return [
        (f"{name}.w", (c_in, c_out, 3, 3)),
        (f"{name}.b", (c_out,)),
        (f"{name}.bn_g", (c_out,)),
        (f"{name}.bn_b", (c_out,)),
    ]


def _res_block_shapes(name, c):
    inner = _res_inner(c)
    return _conv_layer_shapes(f"{name}.c1", c, inner) + _conv_layer_shapes(f"{name}.c2", inner, c)


def parameter_shapes(arch):
    """Ordered (name, shape) list of trainable tensors for this config."""
    c1, c2, c3, c4 = arch.channels
    shapes = []
    shapes += _conv_layer_shapes("enc1", arch.input_channels, c1)
    shapes += _conv_layer_shapes("enc2", c1, c2)
    shapes += _conv_layer_shapes("enc3", c2, c3)
    shapes += _conv_layer_shapes("enc4", c3, c4)
    for k in range(1, arch.residual_blocks_enc + 1):
        shapes += _res_block_shapes(f"enc_res{k}", c4)
    for kern in _LSTM_KERNELS:
        shapes.append((f"lstm.{kern}", (c4, c4, 3, 3)))
    for bias in _LSTM_BIASES:
        shapes.append((f"lstm.{bias}", (c4,)))
    for k in range(1, arch.residual_blocks_dec + 1):
        shapes += _res_block_shapes(f"dec_res{k}", c4)
    # transposed convs consume [features, skip] concatenations, skips in
    # F_4..F_1 order; channel ladder mirrors the encoder
    shapes += _tconv_layer_shapes("dec_t1", c4 + c4, c4)
    shapes += _tconv_layer_shapes("dec_t2", c4 + c3, c3)
    shapes += _tconv_layer_shapes("dec_t3", c3 + c2, c2)
    shapes += _tconv_layer_shapes("dec_t4", c2 + c1, c1)
    shapes += [("out.w", (1, c1, 3, 3)), ("out.b", (1,))]
    return shapes


def buffer_shapes(arch):
    """Ordered (name, shape) list of batchnorm running-stat buffers."""
    out = []
    for name, shape in parameter_shapes(arch):
        if name.endswith(".bn_g"):
            base = name[: -len(".bn_g")]
            out.append((f"{base}.bn_rm", shape))
            out.append((f"{base}.bn_rv", shape))
    return out


class ParamStore:
    """Named trainable tensors plus batchnorm running-stat buffers."""

    def __init__(self, tensors, buffers):
        self.tensors = tensors  # name -> Tensor, requires_grad
        self.buffers = buffers  # name -> ndarray, mutated by train-mode batchnorm

    def __getitem__(self, name):
        return self.tensors[name]

    def zero_grads(self):
        for t in self.tensors.values():
            t.zero_grad()

    def count_parameters(self):
        return sum(t.data.size for t in self.tensors.values())

    def copy(self):
        tensors = {
            k: ad.Tensor(t.data.copy(), requires_grad=True, name=k) for k, t in self.tensors.items()
        }
        buffers = {k: v.copy() for k, v in self.buffers.items()}
        return ParamStore(tensors, buffers)

    def save(self, path):
        everything = {k: t.data for k, t in self.tensors.items()}
        everything.update(self.buffers)
        ad.netp_write(path, everything)

    @classmethod
    def load(cls, path, arch):
        raw = ad.netp_read(path)
        want_t = dict(parameter_shapes(arch))
        want_b = dict(buffer_shapes(arch))
        missing = (set(want_t) | set(want_b)) - set(raw)
        extra = set(raw) - (set(want_t) | set(want_b))
        if missing or extra:
            raise ValueError(f"checkpoint does not match architecture: missing {sorted(missing)}, extra {sorted(extra)}")
        tensors, buffers = {}, {}
        for name, shape in want_t.items():
            if raw[name].shape != shape:
                raise ValueError(f"checkpoint tensor {name} has shape {raw[name].shape}, expected {shape}")
            tensors[name] = ad.Tensor(raw[name], requires_grad=True, name=name)
        for name, shape in want_b.items():
            if raw[name].shape != shape:
                raise ValueError(f"checkpoint buffer {name} has shape {raw[name].shape}, expected {shape}")
            buffers[name] = raw[name].copy()
        return cls(tensors, buffers)


def init_params(arch, seed):
    """Kaiming fan-in init for kernels, zero biases, unit-gamma batchnorm."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(arch):
        if name.endswith(".w") and len(shape) == 4:
            if name.startswith("dec_t"):
                fan_in = shape[0] * shape[2] * shape[3]  # tconv weight is (c_in, c_out, kh, kw)
            else:
                fan_in = shape[1] * shape[2] * shape[3]
            gain = 1.0 if name.startswith(("lstm.", "out.")) else 2.0
            data = rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)
        elif name.startswith("lstm.w_"):
            fan_in = shape[1] * shape[2] * shape[3]
            data = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape)
        elif name.endswith(".bn_g"):
            data = np.ones(shape)
        else:  # biases and bn offsets
            data = np.zeros(shape)
        tensors[name] = ad.Tensor(data, requires_grad=True, name=name)
    buffers = {}
    for name, shape in buffer_shapes(arch):
        buffers[name] = np.zeros(shape) if name.endswith(".bn_rm") else np.ones(shape)
    return ParamStore(tensors, buffers)


# ---------------------------------------------------------------------------
# layer helpers
# ---------------------------------------------------------------------------

def _conv_bn_relu(tape, x, ps, name, stride, mode):
    h = ad.conv2d(tape, x, ps[f"{name}.w"], ps[f"{name}.b"], stride=stride, pad=1)
    h = ad.batchnorm(
        tape, h, ps[f"{name}.bn_g"], ps[f"{name}.bn_b"],
        ps.buffers[f"{name}.bn_rm"], ps.buffers[f"{name}.bn_rv"], mode=mode,
    )
    return ad.relu(tape, h)


def _conv_bn(tape, x, ps, name, stride, mode):
    h = ad.conv2d(tape, x, ps[f"{name}.w"], ps[f"{name}.b"], stride=stride, pad=1)
    return ad.batchnorm(
        tape, h, ps[f"{name}.bn_g"], ps[f"{name}.bn_b"],
        ps.buffers[f"{name}.bn_rm"], ps.buffers[f"{name}.bn_rv"], mode=mode,
    )


def _residual_block(tape, x, ps, name, mode):
    h = _conv_bn_relu(tape, x, ps, f"{name}.c1", 1, mode)
    h = _conv_bn(tape, h, ps, f"{name}.c2", 1, mode)
    return ad.relu(tape, ad.add(tape, x, h))


def _tconv_bn_relu(tape, x, ps, name, stride, out_hw, mode):
    h = ad.conv2d_transpose(tape, x, ps[f"{name}.w"], ps[f"{name}.b"], stride=stride, pad=1, out_hw=out_hw)
    h = ad.batchnorm(
        tape, h, ps[f"{name}.bn_g"], ps[f"{name}.bn_b"],
        ps.buffers[f"{name}.bn_rm"], ps.buffers[f"{name}.bn_rv"], mode=mode,
    )
    return ad.relu(tape, h)


# ---------------------------------------------------------------------------
# network stages
# ---------------------------------------------------------------------------

def encode(tape, x, ps, arch, mode):
    """Input (n, 2, nx, ny) -> feature maps F_1..F_5."""
    f1 = _conv_bn_relu(tape, x, ps, "enc1", 2, mode)
    f2 = _conv_bn_relu(tape, f1, ps, "enc2", 1, mode)
    f3 = _conv_bn_relu(tape, f2, ps, "enc3", 2, mode)
    f4 = _conv_bn_relu(tape, f3, ps, "enc4", 1, mode)
    f5 = f4
    for k in range(1, arch.residual_blocks_enc + 1):
        f5 = _residual_block(tape, f5, ps, f"enc_res{k}", mode)
    return f1, f2, f3, f4, f5


def convlstm_step(tape, chi, state, ps, debug=False):
    """One convLSTM update; returns (H^t, C^t)."""
    h_prev, c_prev = state

    def gate(kx, kh, kb, squash):
        z = ad.add(
            tape,
            ad.conv2d(tape, chi, ps[f"lstm.{kx}"], ps[f"lstm.{kb}"], stride=1, pad=1),
            ad.conv2d(tape, h_prev, ps[f"lstm.{kh}"], None, stride=1, pad=1),
        )
        return squash(tape, z)

    f = gate("w_xf", "w_hf", "b_f", ad.sigmoid)
    i = gate("w_xi", "w_hi", "b_i", ad.sigmoid)
    o = gate("w_xo", "w_ho", "b_o", ad.sigmoid)
    c_tilde = gate("w_xc", "w_hc", "b_c", ad.tanh)
    c_new = ad.add(tape, ad.hadamard(tape, f, c_prev), ad.hadamard(tape, i, c_tilde))
    h_new = ad.hadamard(tape, o, ad.tanh(tape, c_new))
    if debug or DEBUG:
        for g, lo, hi, what in ((f, 0, 1, "f"), (i, 0, 1, "i"), (o, 0, 1, "o"), (c_tilde, -1, 1, "c_tilde")):
            assert np.all(g.data > lo) and np.all(g.data < hi), f"gate {what} out of range"
        assert np.all(np.abs(h_new.data) < 1.0), "hidden state left (-1, 1)"
        assert np.all(np.isfinite(c_new.data)), "cell state not finite"
    return h_new, c_new


def unroll(tape, f5, ps, n_t, debug=False):
    """Static input chi_t = F_5 at every step from zero state; returns [H^1..H^n_t]."""
    zeros = np.zeros_like(f5.data)
    h = ad.Tensor(zeros.copy(), name="H0")
    c = ad.Tensor(zeros.copy(), name="C0")
    outputs = []
    for _ in range(n_t):
        h, c = convlstm_step(tape, f5, (h, c), ps, debug=debug)
        outputs.append(h)
    return outputs


def decode(tape, f5_t, skips, ps, arch, mode):
    """One hidden state + encoder skips -> full-resolution map (n, 1, nx, ny)."""
    f1, f2, f3, f4 = skips
    d = f5_t
    for k in range(1, arch.residual_blocks_dec + 1):
        d = _residual_block(tape, d, ps, f"dec_res{k}", mode)
    quarter = f4.data.shape[2:]
    half = f1.data.shape[2:]
    full = (2 * half[0], 2 * half[1])
    d = _tconv_bn_relu(tape, ad.concat_channels(tape, [d, f4]), ps, "dec_t1", 1, quarter, mode)
    d = _tconv_bn_relu(tape, ad.concat_channels(tape, [d, f3]), ps, "dec_t2", 2, half, mode)
    d = _tconv_bn_relu(tape, ad.concat_channels(tape, [d, f2]), ps, "dec_t3", 1, half, mode)
    d = _tconv_bn_relu(tape, ad.concat_channels(tape, [d, f1]), ps, "dec_t4", 2, full, mode)
    out = ad.conv2d(tape, d, ps["out.w"], ps["out.b"], stride=1, pad=1)
    if arch.final_activation == "sigmoid":
        out = ad.sigmoid(tape, out)
    return out


def forward(tape, x, ps, arch, mode, debug=False):
    """Full net: returns a list of n_t maps shaped (n, 1, nx, ny)."""
    if x.data.ndim != 4 or x.data.shape[1] != arch.input_channels:
        raise ValueError(f"input must be (n, {arch.input_channels}, nx, ny), got {x.data.shape}")
    if x.data.shape[2] != arch.nx or x.data.shape[3] != arch.ny:
        raise ValueError(f"input grid {x.data.shape[2:]} does not match config ({arch.nx}, {arch.ny})")
    f1, f2, f3, f4, f5 = encode(tape, x, ps, arch, mode)
    hidden = unroll(tape, f5, ps, arch.n_t, debug=debug)
    return [decode(tape, h, (f1, f2, f3, f4), ps, arch, mode) for h in hidden]


def forward_arrays(x_array, ps, arch, debug=False):
    """Inference helper: ndarray in, (n, n_t, nx, ny) ndarray out, eval mode."""
    preds = forward(None, ad.Tensor(x_array), ps, arch, mode="eval", debug=debug)
    return np.stack([p.data[:, 0] for p in preds], axis=1)

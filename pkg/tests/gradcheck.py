"""Shared finite-difference gradient harness for whole networks.

Checks sampled entries of every parameter tensor against central
differences, plus one directional derivative that touches every entry at
once.  ReLU kinks are detected by comparing the activation sign patterns
of the two perturbed forward passes and skipping entries that straddle
one (the loss is not differentiable there).
"""

import numpy as np

from surroflow import autodiff as ad
from surroflow import network as net


def network_loss(tape, x, target, ps, arch):
    """Mean squared error between forward(x) and target (n, n_t, nx, ny)."""
    preds = net.forward(tape, x, ps, arch, mode="train")
    total = None
    for t, pred in enumerate(preds):
        diff = ad.sub(tape, pred, ad.Tensor(target[:, t][:, None]))
        s = ad.sum_all(tape, ad.square(tape, diff))
        total = s if total is None else ad.add(tape, total, s)
    return ad.scale(tape, total, 1.0 / target.size)


def check_network_gradients(arch, seed, entries_per_tensor=2, eps=1e-5, tol=1e-5):
    """Returns (worst_rel_err, n_checked, n_skipped_kinks). Raises on failure."""
    rng = np.random.default_rng(seed)
    ps = net.init_params(arch, seed)
    x = ad.Tensor(rng.standard_normal((2, arch.input_channels, arch.nx, arch.ny)))
    target = rng.standard_normal((2, arch.n_t, arch.nx, arch.ny))

    def eval_loss(capture=False):
        tape = ad.Tape(capture_relu_masks=capture)
        loss = network_loss(tape, x, target, ps, arch)
        return tape, loss

    tape, loss = eval_loss()
    tape.backward(loss)
    analytic = {k: t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for k, t in ps.tensors.items()}
    gmax = max(np.max(np.abs(g)) for g in analytic.values())
    # Entries whose gradient sits below the finite-difference noise floor
    # (conv biases feeding train-mode batchnorm are exactly zero, for one)
    # cannot be resolved by central differences at this eps; they pass as
    # matching zeros.  Everything above the floor faces the strict bar.
    zero_floor = 1e-6 * max(1.0, gmax)
    denom_floor = 1e-3 * max(1.0, gmax)

    worst = 0.0
    n_checked = 0
    n_skipped = 0
    for name, tensor in ps.tensors.items():
        g = analytic[name]
        flat = tensor.data.ravel()
        gflat = g.ravel()
        # largest-gradient entries plus random ones: covers the tensor while
        # keeping the comparison above finite-difference noise
        order = np.argsort(-np.abs(gflat))
        picks = list(order[:entries_per_tensor])
        picks += list(rng.integers(0, flat.size, size=entries_per_tensor))
        for idx in dict.fromkeys(int(p) for p in picks):
            keep = flat[idx]
            flat[idx] = keep + eps
            tp, lp = eval_loss(capture=True)
            flat[idx] = keep - eps
            tm, lm = eval_loss(capture=True)
            flat[idx] = keep
            kink = any(
                not np.array_equal(a, b) for a, b in zip(tp.relu_masks, tm.relu_masks)
            )
            if kink:
                n_skipped += 1
                continue
            fd = (lp.data.item() - lm.data.item()) / (2.0 * eps)
            n_checked += 1
            if abs(gflat[idx]) < zero_floor and abs(fd) < zero_floor:
                continue
            rel = abs(gflat[idx] - fd) / max(abs(gflat[idx]), abs(fd), denom_floor)
            worst = max(worst, rel)
            if rel >= tol:
                raise AssertionError(f"gradient mismatch {name}[{idx}]: ad={gflat[idx]:.3e} fd={fd:.3e} rel={rel:.2e}")

    # Directional derivative touching every parameter entry at once.  The
    # direction is unit-norm so the probe stays in the linear regime, and
    # directions that push any ReLU across its kink are redrawn.
    for _attempt in range(8):
        direction = {k: rng.standard_normal(t.data.shape) for k, t in ps.tensors.items()}
        norm = np.sqrt(sum(np.sum(v * v) for v in direction.values()))
        direction = {k: v / norm for k, v in direction.items()}
        masks = []
        vals = []
        for sgn in (+1.0, -1.0):
            for k, t in ps.tensors.items():
                t.data += sgn * eps * direction[k]
            tp, l_eval = eval_loss(capture=True)
            for k, t in ps.tensors.items():
                t.data -= sgn * eps * direction[k]
            masks.append(tp.relu_masks)
            vals.append(l_eval.data.item())
        if all(np.array_equal(a, b) for a, b in zip(masks[0], masks[1])):
            g_dot_v = sum(np.sum(analytic[k] * direction[k]) for k in analytic)
            fd_dir = (vals[0] - vals[1]) / (2.0 * eps)
            rel_dir = abs(g_dot_v - fd_dir) / max(abs(g_dot_v), abs(fd_dir), denom_floor)
            if rel_dir >= tol:
                raise AssertionError(
                    f"directional derivative mismatch: ad={g_dot_v:.3e} fd={fd_dir:.3e} rel={rel_dir:.2e}"
                )
            worst = max(worst, rel_dir)
            break
    return worst, n_checked, n_skipped

"""Dataset assembly, pressure normalization, the well-weighted training loss,
ADAM, and the training loop for the two state-prediction networks.

Pressure maps are normalized per report step: subtract the training-set mean
map for that step, then min-max scale with the scalar extremes of the
difference maps over the whole training set.  Saturations are already in
[0, 1] and pass through untouched.  The loss is a mean over all map entries
plus a well-block term weighted by lam_well; the pressure net trains with an
L1 penalty, the saturation net with L2.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import network as net
from .geomodel import read_geom, read_wells_csv, write_geom, write_wells_csv
from .simulator import (
    SimulationDiverged,
    StateSequence,
    read_rates_csv,
    read_rstf,
    simulate,
    write_rates_csv,
    write_rstf,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# pressure normalization
# ---------------------------------------------------------------------------

@dataclass
class Normalizer:
    mean_maps: np.ndarray  # (n_t, nx, ny), bar
    min_t: np.ndarray  # (n_t,)
    max_t: np.ndarray  # (n_t,)
    degenerate: np.ndarray  # (n_t,) bool, True where max_t == min_t

    @property
    def n_t(self):
        return self.mean_maps.shape[0]

    def scale(self):
        return np.where(self.degenerate, 1.0, self.max_t - self.min_t)


def fit_normalizer(pressures):
    """Fit per-step mean maps and scalar min/max from (n_s, n_t, nx, ny) bar."""
    pressures = np.asarray(pressures, dtype=np.float64)
    if pressures.ndim != 4 or pressures.shape[0] < 2:
        raise ValueError("need at least two pressure sequences shaped (n_s, n_t, nx, ny)")
    mean_maps = pressures.mean(axis=0)
    diff = pressures - mean_maps[None]
    min_t = diff.min(axis=(0, 2, 3))
    max_t = diff.max(axis=(0, 2, 3))
    degenerate = max_t == min_t
    return Normalizer(mean_maps=mean_maps, min_t=min_t, max_t=max_t, degenerate=degenerate)


def transform_pressure(seq, norm):
    """(..., n_t, nx, ny) bar -> normalized; degenerate steps map to 0.5."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.shape[-3] != norm.n_t:
        raise ValueError("step count does not match normalizer")
    scale = norm.scale()[:, None, None]
    out = (seq - norm.mean_maps - norm.min_t[:, None, None]) / scale
    deg = norm.degenerate[:, None, None]
    return np.where(deg, 0.5, out)


def inverse_transform_pressure(seq, norm):
    """Exact algebraic inverse of transform_pressure (0.5-centered when degenerate)."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.shape[-3] != norm.n_t:
        raise ValueError("step count does not match normalizer")
    scale = norm.scale()[:, None, None]
    deg = norm.degenerate[:, None, None]
    shifted = np.where(deg, seq - 0.5, seq)
    return shifted * scale + norm.min_t[:, None, None] + norm.mean_maps


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def _check_norm_kind(kind):
    if kind not in ("l1", "l2"):
        raise ValueError(f"norm kind must be 'l1' or 'l2', got {kind!r}")


def loss_value(pred, target, well_blocks, lam_well, kind):
    """Mean |error|^p over all entries + lam_well * mean over well entries.

    pred/target: (n, n_t, nx, ny); well_blocks: flat indices i*ny + j.
    """
    _check_norm_kind(kind)
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("prediction/target shape mismatch")
    err = np.abs(pred - target)
    if kind == "l2":
        err = err**2
    total = float(err.mean())
    well_blocks = np.asarray(well_blocks, dtype=int)
    if lam_well > 0 and well_blocks.size:
        flat = err.reshape(err.shape[0], err.shape[1], -1)
        total += lam_well * float(flat[..., well_blocks].mean())
    return total


def loss_graph(tape, preds, targets, well_blocks, lam_well, kind):
    """Same loss as loss_value, built on the tape from per-step predictions.

    preds: list of n_t Tensors (n, 1, nx, ny); targets: ndarray (n, n_t, nx, ny).
    """
    _check_norm_kind(kind)
    n, n_t = targets.shape[0], targets.shape[1]
    nx, ny = targets.shape[2], targets.shape[3]
    if len(preds) != n_t:
        raise ValueError("prediction step count does not match targets")
    well_blocks = np.asarray(well_blocks, dtype=int)
    use_wells = lam_well > 0 and well_blocks.size > 0
    if use_wells:
        mask2d = np.zeros(nx * ny)
        mask2d[well_blocks] = 1.0
        mask = ad.Tensor(np.broadcast_to(mask2d.reshape(1, 1, nx, ny), (n, 1, nx, ny)).copy())
    field_sum = None
    well_sum = None
    for t in range(n_t):
        tgt = ad.Tensor(targets[:, t].reshape(n, 1, nx, ny))
        diff = ad.sub(tape, preds[t], tgt)
        err = ad.abs_(tape, diff) if kind == "l1" else ad.square(tape, diff)
        fs = ad.sum_all(tape, err)
        field_sum = fs if field_sum is None else ad.add(tape, field_sum, fs)
        if use_wells:
            ws = ad.sum_all(tape, ad.hadamard(tape, err, mask))
            well_sum = ws if well_sum is None else ad.add(tape, well_sum, ws)
    total = ad.scale(tape, field_sum, 1.0 / (n * n_t * nx * ny))
    if use_wells:
        total = ad.add(
            tape, total, ad.scale(tape, well_sum, lam_well / (n * n_t * well_blocks.size))
        )
    return total


# ---------------------------------------------------------------------------
# ADAM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.003
    batch: int = 8
    lam_well: float = 1000.0
    epochs: int = 200
    norm: str | None = None  # None: l1 for pressure, l2 for saturation
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    stop_loss: float | None = None  # stop early once epoch loss falls this low

    def __post_init__(self):
        if self.lr <= 0 or self.batch < 1 or self.epochs < 1:
            raise ValueError("lr must be positive, batch and epochs at least 1")
        if self.lam_well < 0:
            raise ValueError("lam_well must be nonnegative")
        if self.norm is not None:
            _check_norm_kind(self.norm)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, checkpoint, history):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history


@dataclass
class AdamState:
    m: dict
    v: dict

    @classmethod
    def for_params(cls, store):
        return cls(
            m={k: np.zeros_like(t.data) for k, t in store.tensors.items()},
            v={k: np.zeros_like(t.data) for k, t in store.tensors.items()},
        )


def adam_step(store, state, cfg, t):
    """Bias-corrected ADAM update of every tensor in store from its .grad."""
    if t < 1:
        raise ValueError("step count starts at 1")
    grads = {}
    for name, tensor in store.tensors.items():
        g = tensor.grad
        if g is None:
            g = np.zeros_like(tensor.data)
        if not np.all(np.isfinite(g)):
            raise RuntimeError("training diverged: non-finite gradient")
        grads[name] = g
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, tensor in store.tensors.items():
        g = grads[name]
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g**2
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        tensor.data -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

@dataclass
class TrainingSet:
    inputs: np.ndarray  # (n_s, 2, nx, ny): standardized log10(k), well mask
    targets_p: np.ndarray  # (n_s, n_t, nx, ny), normalized
    targets_s: np.ndarray  # (n_s, n_t, nx, ny), raw saturations
    well_blocks: np.ndarray  # (n_w,) flat indices i*ny + j
    normalizer: Normalizer
    models: list
    states: list  # raw StateSequence per kept model
    rates: list  # WellRates per kept model
    wells: tuple
    report_times_days: tuple
    skipped: int
    logk_mean: float
    logk_std: float

    @property
    def n_s(self):
        return self.inputs.shape[0]

    @property
    def n_t(self):
        return self.targets_p.shape[1]

    @property
    def n_w(self):
        return int(self.well_blocks.size)


def make_inputs(perms, wells, grid, logk_mean, logk_std):
    """Stack (standardized log10 permeability, well mask) channels."""
    n = len(perms)
    mask = np.zeros((grid.nx, grid.ny))
    for w in wells:
        mask[w.i, w.j] = 1.0
    out = np.zeros((n, 2, grid.nx, grid.ny))
    for k, perm in enumerate(perms):
        out[k, 0] = (np.log10(perm) - logk_mean) / logk_std
        out[k, 1] = mask
    return out


def _simulate_index(args):
    model, config, index = args
    try:
        states, rates = simulate(model, config)
        return index, states, rates, None
    except SimulationDiverged as exc:
        return index, None, None, str(exc)


def build_dataset(models, config, n_s=None, jobs=1):
    """Simulate models, fit the normalizer, assemble the training set.

    Failed simulations are skipped and logged; more than 10% failures raise.
    """
    if n_s is None:
        n_s = len(models)
    if n_s > len(models):
        raise ValueError("n_s exceeds the number of models")
    work = [(models[k], config, k) for k in range(n_s)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_simulate_index, work))
    else:
        results = [_simulate_index(w) for w in work]

    kept_models, kept_states, kept_rates = [], [], []
    skipped = 0
    for index, states, rates, error in results:
        if error is not None:
            skipped += 1
            log.warning("skipping model %d: %s", index, error)
            continue
        kept_models.append(models[index])
        kept_states.append(states)
        kept_rates.append(rates)
    if skipped > 0.1 * n_s:
        raise RuntimeError(
            f"dataset unreliable: {skipped} of {n_s} simulations failed"
        )

    pressures = np.stack([s.pressure_bar for s in kept_states])
    saturations = np.stack([s.saturation for s in kept_states])
    normalizer = fit_normalizer(pressures)
    targets_p = transform_pressure(pressures, normalizer)

    logk = np.log10(np.stack([m.perm_md for m in kept_models]))
    logk_mean = float(logk.mean())
    logk_std = float(logk.std())
    if logk_std < 1e-12:
        logk_std = 1.0
    grid = config.grid
    inputs = make_inputs([m.perm_md for m in kept_models], config.wells, grid, logk_mean, logk_std)
    well_blocks = np.array(sorted(w.i * grid.ny + w.j for w in config.wells), dtype=int)

    return TrainingSet(
        inputs=inputs,
        targets_p=targets_p,
        targets_s=saturations,
        well_blocks=well_blocks,
        normalizer=normalizer,
        models=kept_models,
        states=kept_states,
        rates=kept_rates,
        wells=tuple(config.wells),
        report_times_days=tuple(config.report_times_days),
        skipped=skipped,
        logk_mean=logk_mean,
        logk_std=logk_std,
    )


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def train(dataset, arch, cfg, target):
    """Train one network; returns (best ParamStore, epoch loss history)."""
    if target not in ("pressure", "saturation"):
        raise ValueError("target must be 'pressure' or 'saturation'")
    if (arch.nx, arch.ny) != dataset.inputs.shape[2:]:
        raise ValueError("architecture grid does not match dataset grid")
    if cfg.batch > dataset.n_s:
        raise ValueError("batch size exceeds dataset size")
    arch = dataclasses.replace(
        arch,
        n_t=dataset.n_t,
        final_activation="linear" if target == "pressure" else "sigmoid",
    )
    kind = cfg.norm if cfg.norm is not None else ("l1" if target == "pressure" else "l2")
    targets = dataset.targets_p if target == "pressure" else dataset.targets_s

    ps = net.init_params(arch, cfg.seed)
    adam = AdamState.for_params(ps)
    n_s = dataset.n_s
    history = []
    best_loss = np.inf
    best = None
    step = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng((cfg.seed, epoch))
        perm = rng.permutation(n_s)
        total = 0.0
        for start in range(0, n_s, cfg.batch):
            idx = perm[start : start + cfg.batch]
            tape = ad.Tape()
            x = ad.Tensor(dataset.inputs[idx])
            preds = net.forward(tape, x, ps, arch, mode="train")
            lt = loss_graph(tape, preds, targets[idx], dataset.well_blocks, cfg.lam_well, kind)
            lv = float(lt.data)
            if not np.isfinite(lv):
                raise TrainingDiverged(
                    "training diverged: non-finite loss",
                    checkpoint=best if best is not None else ps.copy(),
                    history=history,
                )
            ps.zero_grads()
            tape.backward(lt)
            step += 1
            try:
                adam_step(ps, adam, cfg, step)
            except RuntimeError as exc:
                raise TrainingDiverged(
                    str(exc),
                    checkpoint=best if best is not None else ps.copy(),
                    history=history,
                ) from exc
            total += lv * len(idx)
        epoch_loss = total / n_s
        history.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best = ps.copy()
        if cfg.stop_loss is not None and epoch_loss <= cfg.stop_loss:
            break
    return best, history


def predict(params, arch, inputs):
    """Eval-mode forward pass; returns (n, n_t, nx, ny)."""
    return net.forward_arrays(inputs, params, arch)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def write_loss_csv(path, history):
    with open(path, "w") as f:
        f.write("epoch,loss\n")
        for k, v in enumerate(history, start=1):
            f.write(f"{k},{float(v)!r}\n")


def read_loss_csv(path):
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != "epoch,loss":
        raise ValueError(f"bad loss CSV header in {path}")
    return [float(line.split(",")[1]) for line in lines[1:] if line]


def save_training_set(out_dir, dataset, grid):
    """Write GEOM/RSTF/CSV files plus a JSON manifest under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("models", "states", "rates"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    model_paths, state_paths, rate_paths = [], [], []
    for k in range(dataset.n_s):
        mp = os.path.join("models", f"model_{k:04d}.geom")
        sp = os.path.join("states", f"states_{k:04d}.rstf")
        rp = os.path.join("rates", f"rates_{k:04d}.csv")
        write_geom(os.path.join(out_dir, mp), dataset.models[k])
        write_rstf(os.path.join(out_dir, sp), dataset.states[k])
        write_rates_csv(os.path.join(out_dir, rp), dataset.rates[k])
        model_paths.append(mp)
        state_paths.append(sp)
        rate_paths.append(rp)
    write_wells_csv(os.path.join(out_dir, "wells.csv"), dataset.wells)
    norm = dataset.normalizer
    write_rstf(
        os.path.join(out_dir, "normalizer.rstf"),
        StateSequence(
            times_days=np.asarray(dataset.report_times_days),
            pressure_bar=norm.mean_maps,
            saturation=np.zeros_like(norm.mean_maps),
        ),
    )
    manifest = {
        "grid": {"nx": grid.nx, "ny": grid.ny, "dx": grid.dx, "dy": grid.dy, "dz": grid.dz},
        "report_times_days": list(dataset.report_times_days),
        "well_blocks": [int(b) for b in dataset.well_blocks],
        "wells_csv": "wells.csv",
        "models": model_paths,
        "states": state_paths,
        "rates": rate_paths,
        "normalizer_rstf": "normalizer.rstf",
        "normalizer_min_t": [float(v) for v in norm.min_t],
        "normalizer_max_t": [float(v) for v in norm.max_t],
        "normalizer_degenerate": [bool(v) for v in norm.degenerate],
        "logk_mean": dataset.logk_mean,
        "logk_std": dataset.logk_std,
        "skipped": dataset.skipped,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_training_set(out_dir):
    """Rebuild a TrainingSet from a manifest directory; returns (set, GridSpec)."""
    from .geomodel import GridSpec

    with open(os.path.join(out_dir, "manifest.json")) as f:
        manifest = json.load(f)
    g = manifest["grid"]
    grid = GridSpec(nx=g["nx"], ny=g["ny"], dx=g["dx"], dy=g["dy"], dz=g["dz"])
    wells = tuple(read_wells_csv(os.path.join(out_dir, manifest["wells_csv"])))
    times = manifest["report_times_days"]
    models = [read_geom(os.path.join(out_dir, p)) for p in manifest["models"]]
    states = [read_rstf(os.path.join(out_dir, p), times_days=times) for p in manifest["states"]]
    rates = [read_rates_csv(os.path.join(out_dir, p)) for p in manifest["rates"]]
    mean_seq = read_rstf(os.path.join(out_dir, manifest["normalizer_rstf"]), times_days=times)
    normalizer = Normalizer(
        mean_maps=mean_seq.pressure_bar,
        min_t=np.array(manifest["normalizer_min_t"]),
        max_t=np.array(manifest["normalizer_max_t"]),
        degenerate=np.array(manifest["normalizer_degenerate"], dtype=bool),
    )
    pressures = np.stack([s.pressure_bar for s in states])
    saturations = np.stack([s.saturation for s in states])
    logk_mean = manifest["logk_mean"]
    logk_std = manifest["logk_std"]
    return (
        TrainingSet(
            inputs=make_inputs([m.perm_md for m in models], wells, grid, logk_mean, logk_std),
            targets_p=transform_pressure(pressures, normalizer),
            targets_s=saturations,
            well_blocks=np.array(manifest["well_blocks"], dtype=int),
            normalizer=normalizer,
            models=models,
            states=states,
            rates=rates,
            wells=wells,
            report_times_days=tuple(times),
            skipped=manifest["skipped"],
            logk_mean=logk_mean,
            logk_std=logk_std,
        ),
        grid,
    )

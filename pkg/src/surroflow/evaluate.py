"""Error metrics for surrogate state predictions, well-rate reconstruction
from predicted states, and ensemble percentile statistics.

The rate error uses a 1 m3/day cushion in the denominator, so rates must be
in m3/day when computing it.  Percentiles follow a fixed nearest-rank
convention: Pq is the sorted value at index floor(q*(n_e-1)/100).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from io import StringIO

import numpy as np

from .pipeline import inverse_transform_pressure, make_inputs, predict
from .simulator import StateSequence, rates_from_state_sequence

RATE_EPSILON_M3D = 1.0


# ---------------------------------------------------------------------------
# delta metrics
# ---------------------------------------------------------------------------

def saturation_error(surr, sim):
    """Mean |S_surr - S_sim| / S_sim over every sample, step, and block."""
    surr = np.asarray(surr, dtype=np.float64)
    sim = np.asarray(sim, dtype=np.float64)
    if surr.shape != sim.shape:
        raise ValueError("saturation ensembles must have matching shapes")
    if np.any(sim <= 0.0):
        raise ValueError("simulator saturations must be positive for the relative error")
    return float(np.mean(np.abs(surr - sim) / sim))


def pressure_error(surr, sim):
    """Mean |p_surr - p_sim| / (global sim range) over the evaluation set."""
    surr = np.asarray(surr, dtype=np.float64)
    sim = np.asarray(sim, dtype=np.float64)
    if surr.shape != sim.shape:
        raise ValueError("pressure ensembles must have matching shapes")
    span = float(sim.max() - sim.min())
    if span <= 0.0:
        raise ValueError("simulator pressure range is zero; relative error undefined")
    return float(np.mean(np.abs(surr - sim) / span))


def rate_error(surr, sim):
    """Mean |r_surr - r_sim| / (r_sim + 1 m3/day); rates in m3/day."""
    surr = np.asarray(surr, dtype=np.float64)
    sim = np.asarray(sim, dtype=np.float64)
    if surr.shape != sim.shape:
        raise ValueError("rate ensembles must have matching shapes")
    if surr.size == 0:
        return 0.0
    return float(np.mean(np.abs(surr - sim) / (sim + RATE_EPSILON_M3D)))


def rates_from_states(states, model, wells, fluids):
    """Well rates from (possibly predicted) states via the Peaceman formula.

    Saturations are clamped to [0, 1] inside the rate evaluation; pressures
    are used as-is.
    """
    return rates_from_state_sequence(states, model, wells, fluids)


# ---------------------------------------------------------------------------
# ensemble percentiles
# ---------------------------------------------------------------------------

@dataclass
class EnsembleResult:
    quantity: str
    times_days: np.ndarray  # (n_t,)
    sorted_values: np.ndarray  # (n_e, n_t), sorted along the ensemble axis
    p10: np.ndarray
    p50: np.ndarray
    p90: np.ndarray
    n_e: int


def percentile_index(q, n_e):
    return int(q * (n_e - 1)) // 100


def percentiles(quantity, times_days, values):
    """EnsembleResult from (n_e, n_t) sample values; needs n_e >= 10."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n_e = values.shape[0]
    if n_e < 10:
        raise ValueError("need at least 10 ensemble members for percentiles")
    ordered = np.sort(values, axis=0)
    return EnsembleResult(
        quantity=quantity,
        times_days=np.asarray(times_days, dtype=np.float64),
        sorted_values=ordered,
        p10=ordered[percentile_index(10, n_e)].copy(),
        p50=ordered[percentile_index(50, n_e)].copy(),
        p90=ordered[percentile_index(90, n_e)].copy(),
        n_e=n_e,
    )


# ---------------------------------------------------------------------------
# surrogate ensemble evaluation
# ---------------------------------------------------------------------------

def predict_states(models, wells, grid, times_days, params_p, arch_p, params_s, arch_s,
                   normalizer, logk_mean, logk_std):
    """Surrogate StateSequence per model: pressures denormalized to bar."""
    inputs = make_inputs([m.perm_md for m in models], wells, grid, logk_mean, logk_std)
    p_norm = predict(params_p, arch_p, inputs)
    p_bar = inverse_transform_pressure(p_norm, normalizer)
    s_w = predict(params_s, arch_s, inputs)
    times = np.asarray(times_days, dtype=np.float64)
    return [
        StateSequence(times_days=times, pressure_bar=p_bar[k], saturation=s_w[k])
        for k in range(len(models))
    ]


def evaluate_ensemble(surr_states, sim_states, surr_rates, sim_rates, wells):
    """All five delta metrics over a test ensemble.

    surr_/sim_states: lists of StateSequence; surr_/sim_rates: lists of
    WellRates with identical well ordering.
    """
    sat_surr = np.stack([s.saturation for s in surr_states])
    sat_sim = np.stack([s.saturation for s in sim_states])
    p_surr = np.stack([s.pressure_bar for s in surr_states])
    p_sim = np.stack([s.pressure_bar for s in sim_states])
    prod = [k for k, w in enumerate(wells) if w.kind == "producer"]
    inj = [k for k, w in enumerate(wells) if w.kind == "injector"]
    qo_surr = np.stack([r.q_o[:, prod] for r in surr_rates])
    qo_sim = np.stack([r.q_o[:, prod] for r in sim_rates])
    qw_surr = np.stack([r.q_w[:, prod] for r in surr_rates])
    qw_sim = np.stack([r.q_w[:, prod] for r in sim_rates])
    qi_surr = np.stack([r.q_w[:, inj] for r in surr_rates])
    qi_sim = np.stack([r.q_w[:, inj] for r in sim_rates])
    n_e, n_t, nx, ny = sat_surr.shape
    return {
        "delta_s": saturation_error(sat_surr, sat_sim),
        "delta_p": pressure_error(p_surr, p_sim),
        "delta_r_oil": rate_error(qo_surr, qo_sim),
        "delta_r_water": rate_error(qw_surr, qw_sim),
        "delta_r_inj": rate_error(qi_surr, qi_sim),
        "n_e": n_e,
        "n_t": n_t,
        "n_b": nx * ny,
    }


def rate_ensembles(rates_list, wells, prefix):
    """Per well and phase EnsembleResult list from an ensemble of WellRates."""
    out = []
    times = rates_list[0].times_days
    for k, w in enumerate(wells):
        if w.kind == "producer":
            out.append(percentiles(f"{prefix}qo:{w.id}", times,
                                   np.stack([r.q_o[:, k] for r in rates_list])))
        out.append(percentiles(f"{prefix}qw:{w.id}", times,
                               np.stack([r.q_w[:, k] for r in rates_list])))
    return out


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

METRIC_KEYS = ("delta_s", "delta_p", "delta_r_oil", "delta_r_water", "delta_r_inj",
               "n_e", "n_t", "n_b")


def write_metrics_json(path, metrics):
    missing = set(METRIC_KEYS) - set(metrics)
    if missing:
        raise ValueError(f"metrics report missing keys: {sorted(missing)}")
    with open(path, "w") as f:
        json.dump({k: metrics[k] for k in sorted(metrics)}, f, indent=2, sort_keys=True)
        f.write("\n")


def read_metrics_json(path):
    with open(path) as f:
        return json.load(f)


PERCENTILE_CSV_HEADER = ["quantity", "time_days", "p10", "p50", "p90"]


def percentiles_to_csv(results):
    buf = StringIO()
    buf.write(",".join(PERCENTILE_CSV_HEADER) + "\n")
    for res in results:
        for ti, t in enumerate(res.times_days):
            buf.write(
                f"{res.quantity},{float(t)!r},{float(res.p10[ti])!r},"
                f"{float(res.p50[ti])!r},{float(res.p90[ti])!r}\n"
            )
    return buf.getvalue()


def write_percentiles_csv(path, results):
    with open(path, "w") as f:
        f.write(percentiles_to_csv(results))

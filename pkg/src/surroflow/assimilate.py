"""Randomized maximum likelihood history matching over the PCA latent vector,
minimized with a mesh-adaptive coordinate search (deterministic 2l poll).

Each RML run i minimizes

    (g(xi) - d*_i)^T C_D^-1 (g(xi) - d*_i) + ||xi - xi*_i||^2

where d*_i ~ N(d_obs, C_D) and xi*_i ~ N(0, I) are drawn once per run, and
g maps xi through the PCA geomodel, a forward model (surrogate networks or
the simulator), and well-rate reconstruction restricted to the history
window.  The observation vector is ordered producers first (sorted by well
id, oil block then water block, time-ascending inside each block), then
injectors (sorted by id, water only).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .evaluate import predict_states, rates_from_states
from .geomodel import sample_model, write_geom
from .simulator import SimulationDiverged, simulate

MESH_STOP = 1e-8
RATE_EPSILON_M3D = 1.0  # stand-in rate magnitude for zero-rate observations


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------

@dataclass
class Observations:
    d_obs: np.ndarray  # ordered measurement vector, m3/day
    c_d_diag: np.ndarray  # per-measurement variance
    history_horizon_days: float
    times_days: np.ndarray  # report times inside the horizon
    producer_ids: list
    injector_ids: list

    def __post_init__(self):
        self.d_obs = np.asarray(self.d_obs, dtype=np.float64)
        self.c_d_diag = np.asarray(self.c_d_diag, dtype=np.float64)
        self.times_days = np.asarray(self.times_days, dtype=np.float64)
        n_h = self.times_days.size
        want = 2 * len(self.producer_ids) * n_h + len(self.injector_ids) * n_h
        if self.d_obs.size != want:
            raise ValueError(
                f"observation vector has {self.d_obs.size} entries, expected {want}"
            )
        if self.c_d_diag.shape != self.d_obs.shape:
            raise ValueError("variance vector shape does not match observations")
        if np.any(self.c_d_diag <= 0.0):
            raise ValueError("observation variances must be positive")

    @property
    def n_obs(self):
        return self.d_obs.size


def observation_vector(rates, wells, horizon_days):
    """Flatten WellRates into the fixed observation ordering."""
    mask = rates.times_days <= horizon_days + 1e-9
    if not np.any(mask):
        raise ValueError("no report times inside the history horizon")
    producers = sorted((w.id for w in wells if w.kind == "producer"))
    injectors = sorted((w.id for w in wells if w.kind == "injector"))
    col = {wid: k for k, wid in enumerate(rates.well_ids)}
    parts = []
    for wid in producers:
        parts.append(rates.q_o[mask, col[wid]])
        parts.append(rates.q_w[mask, col[wid]])
    for wid in injectors:
        parts.append(rates.q_w[mask, col[wid]])
    return np.concatenate(parts), rates.times_days[mask]


def make_observations(true_model, config, noise_frac, history_horizon_days, seed):
    """Simulate the truth and return noisy observations with C_D variances."""
    if history_horizon_days > config.report_times_days[-1] + 1e-9:
        raise ValueError("history horizon exceeds the last report time")
    _, rates = simulate(true_model, config)
    d_true, times = observation_vector(rates, config.wells, history_horizon_days)
    sigma = noise_frac * np.abs(d_true)
    rng = np.random.default_rng(seed)
    d_obs = d_true + rng.normal(size=d_true.size) * sigma
    # variance floor keeps C_D invertible for zero-rate (or zero-noise) data
    floor = (max(noise_frac, 0.05) * RATE_EPSILON_M3D) ** 2
    c_d = np.maximum(sigma**2, floor)
    producers = sorted(w.id for w in config.wells if w.kind == "producer")
    injectors = sorted(w.id for w in config.wells if w.kind == "injector")
    return Observations(
        d_obs=d_obs,
        c_d_diag=c_d,
        history_horizon_days=float(history_horizon_days),
        times_days=times,
        producer_ids=producers,
        injector_ids=injectors,
    )


def write_observations_json(path, obs):
    doc = {
        "d_obs": [float(v) for v in obs.d_obs],
        "c_d_diag": [float(v) for v in obs.c_d_diag],
        "history_horizon_days": obs.history_horizon_days,
        "times_days": [float(t) for t in obs.times_days],
        "producer_ids": list(obs.producer_ids),
        "injector_ids": list(obs.injector_ids),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_observations_json(path):
    with open(path) as f:
        doc = json.load(f)
    return Observations(
        d_obs=np.array(doc["d_obs"]),
        c_d_diag=np.array(doc["c_d_diag"]),
        history_horizon_days=doc["history_horizon_days"],
        times_days=np.array(doc["times_days"]),
        producer_ids=list(doc["producer_ids"]),
        injector_ids=list(doc["injector_ids"]),
    )


# ---------------------------------------------------------------------------
# RML problem and objective
# ---------------------------------------------------------------------------

@dataclass
class SurrogateForward:
    params_p: object
    arch_p: object
    params_s: object
    arch_s: object
    normalizer: object
    logk_mean: float
    logk_std: float


@dataclass
class RmlProblem:
    basis: object  # PcaBasis
    wells: tuple
    sim_config: object  # SimConfig
    obs: Observations
    forward: str = "surrogate"  # or "simulator"
    surrogate: SurrogateForward | None = None
    n_r: int = 10
    max_iter: int = 60
    delta_0: float = 0.5
    perturbations: list = field(default_factory=list)  # (d_star, xi_star) per run

    def __post_init__(self):
        if self.forward not in ("surrogate", "simulator"):
            raise ValueError("forward model must be 'surrogate' or 'simulator'")
        if self.forward == "surrogate" and self.surrogate is None:
            raise ValueError("surrogate forward model requires network checkpoints")
        if self.n_r < 1:
            raise ValueError("need at least one RML run")


def _forward_rates_batch(problem, xis):
    """Observation vectors for a batch of latent points; None where failed."""
    models = []
    for xi in xis:
        models.append(sample_model(problem.basis, np.asarray(xi, dtype=np.float64),
                                   problem.wells))
    cfg = problem.sim_config
    horizon = problem.obs.history_horizon_days
    out = []
    if problem.forward == "simulator":
        for model in models:
            try:
                _, rates = simulate(model, cfg)
                vec, _ = observation_vector(rates, problem.wells, horizon)
                out.append(vec)
            except SimulationDiverged:
                out.append(None)
        return out
    sf = problem.surrogate
    states = predict_states(
        models, problem.wells, cfg.grid, cfg.report_times_days,
        sf.params_p, sf.arch_p, sf.params_s, sf.arch_s,
        sf.normalizer, sf.logk_mean, sf.logk_std,
    )
    for model, st in zip(models, states):
        rates = rates_from_states(st, model, problem.wells, cfg.fluids)
        vec, _ = observation_vector(rates, problem.wells, horizon)
        out.append(vec)
    return out


def data_misfit(g_vec, d_star, c_d_diag):
    r = g_vec - d_star
    return float(np.sum(r * r / c_d_diag))


def rml_objective_batch(problem, run_index, xis):
    """RML objective at several latent points for run run_index; inf on failure."""
    d_star, xi_star = problem.perturbations[run_index]
    vecs = _forward_rates_batch(problem, xis)
    vals = []
    for xi, vec in zip(xis, vecs):
        if vec is None or not np.all(np.isfinite(vec)):
            vals.append(np.inf)
            continue
        reg = float(np.sum((np.asarray(xi) - xi_star) ** 2))
        vals.append(data_misfit(vec, d_star, problem.obs.c_d_diag) + reg)
    return vals


def rml_objective(xi, problem, run_index):
    return rml_objective_batch(problem, run_index, [xi])[0]


# ---------------------------------------------------------------------------
# MADS (deterministic coordinate poll)
# ---------------------------------------------------------------------------

def mads_minimize(objective, xi_0, max_iter, delta_0, batch_objective=None):
    """Coordinate-poll direct search; returns (xi_best, f_best, trace).

    Each iteration evaluates the 2l points xi +- delta*e_k and moves to the
    best strictly improving one (ties break toward the lowest coordinate,
    negative direction first); delta doubles on success (capped at delta_0)
    and halves on failure.  Stops after max_iter iterations or when delta
    drops below 1e-8.
    """
    xi = np.asarray(xi_0, dtype=np.float64).copy()
    l = xi.size
    if l < 1:
        raise ValueError("need at least one coordinate")
    if batch_objective is None:
        batch_objective = lambda pts: [objective(p) for p in pts]
    f = float(batch_objective([xi])[0])
    evals = 1
    delta = float(delta_0)
    trace = [{"iteration": 0, "objective": f, "delta": delta, "evaluations": evals}]
    for it in range(1, max_iter + 1):
        if delta < MESH_STOP:
            break
        poll = []
        for k in range(l):
            for sign in (-1.0, 1.0):
                p = xi.copy()
                p[k] += sign * delta
                poll.append(p)
        values = [float(v) for v in batch_objective(poll)]
        evals += len(poll)
        best = int(np.argmin(values))  # first minimum: lowest k, negative first
        if values[best] < f:
            xi = poll[best]
            f = values[best]
            delta = min(2.0 * delta, float(delta_0))
        else:
            delta *= 0.5
        trace.append({"iteration": it, "objective": f, "delta": delta, "evaluations": evals})
    return xi, f, trace


# ---------------------------------------------------------------------------
# RML driver
# ---------------------------------------------------------------------------

@dataclass
class RmlRunResult:
    run: int
    xi: np.ndarray
    objective: float
    data_misfit: float
    regularization: float
    prior_misfit: float
    evaluations: int
    failed: bool


def draw_perturbations(problem, seed):
    """Per-run (d*, xi*) pairs from independent child streams of seed."""
    children = np.random.SeedSequence(seed).spawn(problem.n_r)
    problem.perturbations = []
    sigma = np.sqrt(problem.obs.c_d_diag)
    for child in children:
        rng = np.random.default_rng(child)
        d_star = problem.obs.d_obs + rng.normal(size=problem.obs.n_obs) * sigma
        xi_star = rng.standard_normal(problem.basis.n_xi)
        problem.perturbations.append((d_star, xi_star))


def run_single(problem, run_index, xi_start=None):
    """One RML minimization; perturbations for run_index must be present."""
    d_star, xi_star = problem.perturbations[run_index]
    xi_0 = xi_star if xi_start is None else np.asarray(xi_start, dtype=np.float64)

    def batch(points):
        return rml_objective_batch(problem, run_index, points)

    vec0 = _forward_rates_batch(problem, [xi_0])[0]
    prior_data = np.inf
    if vec0 is not None and np.all(np.isfinite(vec0)):
        prior_data = data_misfit(vec0, d_star, problem.obs.c_d_diag)
    xi_best, f_best, trace = mads_minimize(None, xi_0, problem.max_iter,
                                           problem.delta_0, batch_objective=batch)
    failed = not np.isfinite(f_best)
    post_data = np.inf
    reg = np.inf
    if not failed:
        vec = _forward_rates_batch(problem, [xi_best])[0]
        post_data = data_misfit(vec, d_star, problem.obs.c_d_diag)
        reg = float(np.sum((xi_best - xi_star) ** 2))
    return RmlRunResult(
        run=run_index,
        xi=xi_best,
        objective=f_best,
        data_misfit=post_data,
        regularization=reg,
        prior_misfit=prior_data,
        evaluations=trace[-1]["evaluations"],
        failed=failed,
    )


def run_rml(problem, seed):
    """All N_r runs; returns (results, posterior GeoModels)."""
    draw_perturbations(problem, seed)
    results = [run_single(problem, i) for i in range(problem.n_r)]
    failures = sum(r.failed for r in results)
    if failures * 2 >= problem.n_r:
        raise RuntimeError(
            f"history matching failed: {failures} of {problem.n_r} runs diverged"
        )
    models = [
        sample_model(problem.basis, r.xi, problem.wells) for r in results if not r.failed
    ]
    return results, models


def save_posteriors(out_dir, results, models):
    """GEOM file per successful run plus a posteriors.csv summary."""
    os.makedirs(out_dir, exist_ok=True)
    kept = [r for r in results if not r.failed]
    for r, model in zip(kept, models):
        write_geom(os.path.join(out_dir, f"posterior_{r.run:03d}.geom"), model)
    with open(os.path.join(out_dir, "posteriors.csv"), "w") as f:
        f.write("run,final_objective,data_misfit,regularization,prior_misfit,failed\n")
        for r in results:
            f.write(
                f"{r.run},{r.objective!r},{r.data_misfit!r},"
                f"{r.regularization!r},{r.prior_misfit!r},{int(r.failed)}\n"
            )

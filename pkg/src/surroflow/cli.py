"""Command-line driver for the full workbench.

Subcommands chain the workflow: generate geomodels and a PCA basis, simulate
them into a training dataset, train the pressure and saturation networks,
evaluate the surrogate against the simulator on held-out models, and
history-match a truth case with RML. `run-all` executes the whole chain.

An experiment lives in one JSON config (see the packaged `desk.json` and
`smoke.json` under surroflow/configs). The schema is strict: unknown keys are
rejected so typos cannot silently fall back to defaults. All randomness is
derived from the single top-level seed:

    model i of the training pool   default_rng((seed, 1, i))
    model i of the test pool       default_rng((seed, 2, i))
    truth model                    default_rng((seed, 3))
    observation noise              default_rng((seed, 4))
    RML perturbation draws         SeedSequence((seed, 5))
    pressure / saturation training TrainConfig.seed = seed / seed + 1

Exit codes: 0 success, 2 config or usage error, 3 runtime or numerical
failure. Errors print a one-line summary to stderr.
"""

import argparse
import dataclasses
import importlib.resources
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import assimilate as am
from . import evaluate as ev
from . import geomodel as gm
from . import network as net
from . import pipeline as pl
from . import simulator as sim

FORMAT_VERSIONS = "GEOM v1, RSTF1, NETP1"


class ConfigError(ValueError):
    """A problem with the experiment config or command-line inputs."""


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return _is_int(v) or isinstance(v, float)


def _check_keys(obj, where, required, optional=()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    missing = sorted(set(required) - set(obj))
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")


def _typed(obj, where, key, kind):
    v = obj[key]
    ok = {"int": _is_int, "num": _is_num, "str": lambda x: isinstance(x, str),
          "list": lambda x: isinstance(x, list)}[kind](v)
    if not ok:
        raise ConfigError(f"{where}.{key}: expected {kind}, got {v!r}")
    return v


def _build(cls, obj, where):
    """Construct a dataclass from a JSON object, mapping bad values to ConfigError."""
    try:
        return cls(**obj)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclasses.dataclass
class ExperimentConfig:
    name: str
    seed: int
    out_dir: str
    grid: gm.GridSpec
    wells: tuple
    sim_config: sim.SimConfig
    n_train: int
    n_test: int
    n_xi: int
    channels: gm.ChannelParams
    a_md: float
    b: float
    base_filters: int
    train: pl.TrainConfig
    n_r: int
    max_iter: int
    delta_0: float
    noise_frac: float
    history_horizon_days: float
    forward: str


_TOP_KEYS = ("name", "seed", "out_dir", "grid", "wells", "geomodel")
_TOP_OPT = ("fluids", "corey", "sim", "arch", "train", "rml")
_GRID_KEYS = ("nx", "ny", "dx", "dy", "dz")
_WELL_KEYS = ("id", "i", "j", "kind", "bhp_bar", "facies")
_FLUID_KEYS = ("mu_w_cp", "mu_o_ref_cp", "c_mu_o_per_bar", "rho_w_ref",
               "rho_o_ref", "c_w_per_bar", "c_o_per_bar", "p_ref_bar")
_COREY_KEYS = ("s_wc", "s_or", "n_w", "n_o", "k_rw_max", "k_ro_max")
_SIM_KEYS = ("phi", "s_w_init", "p_init_bar", "report_times_days", "newton_tol",
             "max_newton", "dt_init_days", "dt_max_days", "dt_min_days")
_GEO_KEYS = ("n_train", "n_test", "n_xi")
_GEO_OPT = ("a_md", "b", "channels")
_CHAN_KEYS = ("n_channels_min", "n_channels_max", "amplitude_min", "amplitude_max",
              "period_min", "period_max", "width_min", "width_max")
_ARCH_KEYS = ("base_filters",)
_TRAIN_KEYS = ("lr", "batch", "lam_well", "epochs", "norm", "beta1", "beta2",
               "eps", "stop_loss")
_RML_KEYS = ("n_r", "max_iter", "delta_0", "noise_frac", "history_horizon_days",
             "forward")


def parse_config(doc):
    """Validate a config document and build the typed experiment description."""
    _check_keys(doc, "config", _TOP_KEYS, _TOP_OPT)
    name = _typed(doc, "config", "name", "str")
    seed = _typed(doc, "config", "seed", "int")
    out_dir = _typed(doc, "config", "out_dir", "str")

    g = doc["grid"]
    _check_keys(g, "grid", _GRID_KEYS)
    for k in ("nx", "ny"):
        _typed(g, "grid", k, "int")
    for k in ("dx", "dy", "dz"):
        _typed(g, "grid", k, "num")
    grid = _build(gm.GridSpec, g, "grid")

    wells_doc = _typed(doc, "config", "wells", "list")
    wells = []
    for n, w in enumerate(wells_doc):
        where = f"wells[{n}]"
        _check_keys(w, where, _WELL_KEYS)
        wells.append(_build(gm.WellSpec, w, where))
    wells = tuple(wells)

    fluids_doc = doc.get("fluids", {})
    _check_keys(fluids_doc, "fluids", (), _FLUID_KEYS)
    corey_doc = doc.get("corey", {})
    _check_keys(corey_doc, "corey", (), _COREY_KEYS)
    corey = _build(sim.CoreyParams, corey_doc, "corey")
    fluids = _build(sim.FluidProps, dict(fluids_doc, corey=corey), "fluids")

    sim_doc = doc.get("sim", {})
    _check_keys(sim_doc, "sim", (), _SIM_KEYS)
    if "report_times_days" in sim_doc:
        sim_doc = dict(sim_doc, report_times_days=tuple(
            _typed(sim_doc, "sim", "report_times_days", "list")))
    sim_config = _build(
        sim.SimConfig, dict(sim_doc, grid=grid, wells=wells, fluids=fluids), "sim")

    geo = doc["geomodel"]
    _check_keys(geo, "geomodel", _GEO_KEYS, _GEO_OPT)
    n_train = _typed(geo, "geomodel", "n_train", "int")
    n_test = _typed(geo, "geomodel", "n_test", "int")
    n_xi = _typed(geo, "geomodel", "n_xi", "int")
    if n_train < 2 or n_test < 1:
        raise ConfigError("geomodel: need n_train >= 2 and n_test >= 1")
    if not (1 <= n_xi < n_train):
        raise ConfigError("geomodel: need 1 <= n_xi < n_train")
    chan_doc = geo.get("channels", {})
    _check_keys(chan_doc, "geomodel.channels", (), _CHAN_KEYS)
    channels = _build(gm.ChannelParams, chan_doc, "geomodel.channels")
    a_md = geo.get("a_md", gm.DEFAULT_A_MD)
    b = geo.get("b", gm.DEFAULT_B)
    if not (_is_num(a_md) and _is_num(b)):
        raise ConfigError("geomodel: a_md and b must be numbers")

    arch_doc = doc.get("arch", {})
    _check_keys(arch_doc, "arch", (), _ARCH_KEYS)
    base_filters = arch_doc.get("base_filters", 8)
    if not _is_int(base_filters):
        raise ConfigError("arch.base_filters: expected int")

    train_doc = doc.get("train", {})
    _check_keys(train_doc, "train", (), _TRAIN_KEYS)
    train = _build(pl.TrainConfig, dict(train_doc, seed=seed), "train")

    rml_doc = doc.get("rml", {})
    _check_keys(rml_doc, "rml", (), _RML_KEYS)
    forward = rml_doc.get("forward", "surrogate")
    if forward not in ("surrogate", "simulator"):
        raise ConfigError("rml.forward: must be 'surrogate' or 'simulator'")
    horizon = rml_doc.get("history_horizon_days", sim_config.report_times_days[-1])
    if not _is_num(horizon):
        raise ConfigError("rml.history_horizon_days: expected number")

    return ExperimentConfig(
        name=name, seed=seed, out_dir=out_dir, grid=grid, wells=wells,
        sim_config=sim_config, n_train=n_train, n_test=n_test, n_xi=n_xi,
        channels=channels, a_md=float(a_md), b=float(b),
        base_filters=base_filters, train=train,
        n_r=rml_doc.get("n_r", 10), max_iter=rml_doc.get("max_iter", 60),
        delta_0=rml_doc.get("delta_0", 0.5),
        noise_frac=rml_doc.get("noise_frac", 0.05),
        history_horizon_days=float(horizon), forward=forward,
    )


def packaged_config_path(name):
    """Filesystem path of a config shipped inside the package."""
    return str(importlib.resources.files("surroflow").joinpath("configs", f"{name}.json"))


def load_config(path, seed=None, out_dir=None):
    """Read and validate a config file; bare packaged names also resolve."""
    if not os.path.exists(path) and os.sep not in path and not path.endswith(".json"):
        candidate = packaged_config_path(path)
        if os.path.exists(candidate):
            path = candidate
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if seed is not None:
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        doc["seed"] = seed
    cfg = parse_config(doc)
    if out_dir is not None:
        cfg = dataclasses.replace(cfg, out_dir=out_dir)
    return cfg


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _list_geoms(directory):
    if not os.path.isdir(directory):
        raise ConfigError(f"model directory not found: {directory}")
    names = sorted(n for n in os.listdir(directory) if n.endswith(".geom"))
    if not names:
        raise ConfigError(f"no GEOM files found in {directory}")
    return [os.path.join(directory, n) for n in names]


def _load_checkpoint(checkpoint_dir, target, grid, n_t):
    arch_path = os.path.join(checkpoint_dir, f"{target}.arch.json")
    netp_path = os.path.join(checkpoint_dir, f"{target}.netp")
    for p in (arch_path, netp_path):
        if not os.path.exists(p):
            raise ConfigError(f"checkpoint file not found: {p}")
    arch = net.ArchConfig.from_json(arch_path)
    if (arch.nx, arch.ny, arch.n_t) != (grid.nx, grid.ny, n_t):
        raise ConfigError(
            f"checkpoint {target} was trained for grid ({arch.nx}, {arch.ny}) "
            f"with {arch.n_t} steps; this experiment needs ({grid.nx}, {grid.ny}) with {n_t}")
    return net.ParamStore.load(netp_path, arch), arch


def _simulate_models(models, config, jobs):
    """Simulate a list of models, preserving order; failures become None slots."""
    work = [(m, config, k) for k, m in enumerate(models)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(pl._simulate_index, work))
    else:
        results = [pl._simulate_index(w) for w in work]
    states = [None] * len(models)
    rates = [None] * len(models)
    for index, st, ra, error in results:
        if error is not None:
            print(f"warning: test model {index} skipped: {error}", file=sys.stderr)
            continue
        states[index], rates[index] = st, ra
    return states, rates


def _surrogate_from(checkpoint_dir, dataset_dir):
    ts, grid = pl.load_training_set(dataset_dir)
    params_p, arch_p = _load_checkpoint(checkpoint_dir, "pressure", grid, ts.n_t)
    params_s, arch_s = _load_checkpoint(checkpoint_dir, "saturation", grid, ts.n_t)
    sf = am.SurrogateForward(
        params_p=params_p, arch_p=arch_p, params_s=params_s, arch_s=arch_s,
        normalizer=ts.normalizer, logk_mean=ts.logk_mean, logk_std=ts.logk_std)
    return sf, ts, grid


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args):
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
    n_train = cfg.n_train if args.count is None else args.count
    if n_train <= 0:
        raise ConfigError("count must be positive")
    if n_train < 2:
        raise ConfigError("count must be at least 2 to fit a PCA basis")
    n_xi = min(cfg.n_xi, n_train - 1)
    if n_xi < cfg.n_xi:
        print(f"note: clamping n_xi to {n_xi} for {n_train} realizations")

    def make(entropy):
        return gm.generate_channel_realization(
            cfg.grid, cfg.wells, seed=np.random.default_rng(entropy),
            params=cfg.channels, a_md=cfg.a_md, b=cfg.b)

    train_dir = os.path.join(cfg.out_dir, "models")
    test_dir = os.path.join(cfg.out_dir, "test_models")
    os.makedirs(train_dir, exist_ok=True)
    os.makedirs(test_dir, exist_ok=True)
    train_models = [make((cfg.seed, 1, i)) for i in range(n_train)]
    test_models = [make((cfg.seed, 2, i)) for i in range(cfg.n_test)]
    truth = make((cfg.seed, 3))
    for i, m in enumerate(train_models):
        gm.write_geom(os.path.join(train_dir, f"model_{i:04d}.geom"), m)
    for i, m in enumerate(test_models):
        gm.write_geom(os.path.join(test_dir, f"model_{i:04d}.geom"), m)
    gm.write_geom(os.path.join(cfg.out_dir, "truth.geom"), truth)

    basis = gm.fit_pca(train_models, n_xi=n_xi)
    gm.write_pca_basis(os.path.join(cfg.out_dir, "basis.pcab"), basis)
    gm.write_wells_csv(os.path.join(cfg.out_dir, "wells.csv"), cfg.wells)

    everything = train_models + test_models + [truth]
    sand = float(np.mean([m.facies.mean() for m in everything]))
    print(f"wrote {n_train} training + {cfg.n_test} test models + truth to {cfg.out_dir}")
    print(f"PCA basis: {n_xi} components over {cfg.grid.nx}x{cfg.grid.ny} blocks")
    print(f"mean sand fraction {sand:.4f}")
    return 0


def cmd_simulate(args):
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out_root)
    if args.dry_run:
        times = ", ".join(f"{t:g}" for t in cfg.sim_config.report_times_days)
        print(f"report schedule (days): {times}")
        print(f"{cfg.sim_config.n_t} report steps per model; nothing simulated")
        return 0
    models_dir = args.models or os.path.join(cfg.out_dir, "models")
    out = args.out or os.path.join(cfg.out_dir, "dataset")
    paths = _list_geoms(models_dir)
    models = [gm.read_geom(p) for p in paths]
    for n, m in enumerate(models):
        if (m.grid.nx, m.grid.ny) != (cfg.grid.nx, cfg.grid.ny):
            raise ConfigError(f"{paths[n]}: grid does not match the config grid")
    dataset = pl.build_dataset(models, cfg.sim_config, jobs=args.jobs)
    pl.save_training_set(out, dataset, cfg.grid)
    print(f"simulated {dataset.n_s} of {len(models)} models "
          f"({dataset.skipped} skipped) into {out}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config, seed=args.seed)
    dataset_dir = args.dataset or os.path.join(cfg.out_dir, "dataset")
    if not os.path.isdir(dataset_dir):
        raise ConfigError(f"dataset directory not found: {dataset_dir}")
    ts, grid = pl.load_training_set(dataset_dir)
    out = args.out or os.path.join(cfg.out_dir, "checkpoints", f"{args.target}.netp")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)

    arch = net.ArchConfig(nx=grid.nx, ny=grid.ny, n_t=ts.n_t,
                          base_filters=cfg.base_filters)
    seed = cfg.seed + (0 if args.target == "pressure" else 1)
    tcfg = dataclasses.replace(cfg.train, seed=seed)
    try:
        params, history = pl.train(ts, arch, tcfg, args.target)
    except pl.TrainingDiverged as exc:
        raise RuntimeError(str(exc)) from exc
    trained_arch = dataclasses.replace(
        arch, final_activation="linear" if args.target == "pressure" else "sigmoid")
    params.save(out)
    trained_arch.to_json(os.path.splitext(out)[0] + ".arch.json")
    loss_csv = os.path.join(os.path.dirname(out), f"loss_{args.target}.csv")
    pl.write_loss_csv(loss_csv, history)
    print(f"trained {args.target} net on {ts.n_s} samples for {len(history)} epochs; "
          f"best epoch loss {min(history):.6g}; checkpoint {out}")
    return 0


def cmd_evaluate(args):
    cfg = load_config(args.config, seed=args.seed)
    checkpoint_dir = args.checkpoints or os.path.join(cfg.out_dir, "checkpoints")
    dataset_dir = args.dataset or os.path.join(cfg.out_dir, "dataset")
    test_dir = args.test_models or os.path.join(cfg.out_dir, "test_models")
    out = args.out or os.path.join(cfg.out_dir, "evaluate")
    if not os.path.isdir(dataset_dir):
        raise ConfigError(f"dataset directory not found: {dataset_dir}")
    sf, ts, grid = _surrogate_from(checkpoint_dir, dataset_dir)
    paths = _list_geoms(test_dir)
    models = [gm.read_geom(p) for p in paths]

    states, rates = _simulate_models(models, cfg.sim_config, args.jobs)
    kept = [k for k in range(len(models)) if states[k] is not None]
    if not kept:
        raise RuntimeError("every test simulation failed")
    models = [models[k] for k in kept]
    sim_states = [states[k] for k in kept]
    sim_rates = [rates[k] for k in kept]

    times = ts.report_times_days
    surr_states = ev.predict_states(
        models, ts.wells, grid, times, sf.params_p, sf.arch_p, sf.params_s,
        sf.arch_s, sf.normalizer, sf.logk_mean, sf.logk_std)
    fluids = cfg.sim_config.fluids
    surr_rates = [ev.rates_from_states(s, m, ts.wells, fluids)
                  for s, m in zip(surr_states, models)]

    os.makedirs(out, exist_ok=True)
    metrics = ev.evaluate_ensemble(surr_states, sim_states, surr_rates, sim_rates, ts.wells)
    ev.write_metrics_json(os.path.join(out, "metrics.json"), metrics)

    rates_dir = os.path.join(out, "rates")
    os.makedirs(rates_dir, exist_ok=True)
    for k, (sr, rr) in enumerate(zip(sim_rates, surr_rates)):
        sim.write_rates_csv(os.path.join(rates_dir, f"sim_{k:04d}.csv"), sr)
        sim.write_rates_csv(os.path.join(rates_dir, f"surr_{k:04d}.csv"), rr)

    if len(models) >= 10:
        ensembles = ev.rate_ensembles(surr_rates, ts.wells, "surr:")
        ensembles += ev.rate_ensembles(sim_rates, ts.wells, "sim:")
        ev.write_percentiles_csv(os.path.join(out, "percentiles.csv"), ensembles)
    else:
        print(f"note: only {len(models)} test models, percentile curves need 10; "
              "skipping percentiles.csv")
    summary = ", ".join(f"{k}={metrics[k]:.4f}" for k in
                        ("delta_s", "delta_p", "delta_r_oil", "delta_r_water", "delta_r_inj"))
    print(f"evaluated {len(models)} test models: {summary}")
    print(f"metrics written to {out}")
    return 0


def cmd_history_match(args):
    cfg = load_config(args.config, seed=args.seed)
    checkpoint_dir = args.checkpoints or os.path.join(cfg.out_dir, "checkpoints")
    dataset_dir = args.dataset or os.path.join(cfg.out_dir, "dataset")
    truth_path = args.truth or os.path.join(cfg.out_dir, "truth.geom")
    basis_path = args.basis or os.path.join(cfg.out_dir, "basis.pcab")
    out = args.out or os.path.join(cfg.out_dir, "history_match")
    for p in (truth_path, basis_path):
        if not os.path.exists(p):
            raise ConfigError(f"input file not found: {p}")
    truth = gm.read_geom(truth_path)
    basis = gm.read_pca_basis(basis_path)

    surrogate = None
    if cfg.forward == "surrogate":
        surrogate, _, _ = _surrogate_from(checkpoint_dir, dataset_dir)

    obs = am.make_observations(
        truth, cfg.sim_config, cfg.noise_frac, cfg.history_horizon_days,
        seed=(cfg.seed, 4))
    problem = am.RmlProblem(
        basis=basis, wells=cfg.wells, sim_config=cfg.sim_config, obs=obs,
        forward=cfg.forward, surrogate=surrogate, n_r=cfg.n_r,
        max_iter=cfg.max_iter, delta_0=cfg.delta_0)
    results, models = am.run_rml(problem, seed=(cfg.seed, 5))

    os.makedirs(out, exist_ok=True)
    am.write_observations_json(os.path.join(out, "observations.json"), obs)
    am.save_posteriors(out, results, models)
    ok = [r for r in results if not r.failed]
    prior = float(np.median([r.prior_misfit for r in ok]))
    post = float(np.median([r.data_misfit for r in ok]))
    print(f"history matched {len(ok)} of {cfg.n_r} runs "
          f"({cfg.n_r - len(ok)} failed) with the {cfg.forward} forward model")
    print(f"median data misfit: prior {prior:.6g} -> posterior {post:.6g}")
    print(f"posteriors written to {out}")
    return 0


def cmd_run_all(args):
    ns = argparse.Namespace
    seed, jobs = args.seed, args.jobs
    cfg = load_config(args.config, seed=seed, out_dir=args.out)
    out = cfg.out_dir
    print(f"[1/6] generate ({cfg.name})")
    cmd_generate(ns(config=args.config, count=None, out=out, seed=seed))
    print("[2/6] simulate")
    cmd_simulate(ns(config=args.config, models=None, out=None, out_root=out,
                    jobs=jobs, dry_run=False, seed=seed))
    for n, target in enumerate(("pressure", "saturation")):
        print(f"[{3 + n}/6] train {target}")
        cmd_train(ns(config=args.config, dataset=os.path.join(out, "dataset"),
                     target=target, out=os.path.join(out, "checkpoints", f"{target}.netp"),
                     seed=seed))
    print("[5/6] evaluate")
    cmd_evaluate(ns(config=args.config, checkpoints=os.path.join(out, "checkpoints"),
                    dataset=os.path.join(out, "dataset"),
                    test_models=os.path.join(out, "test_models"),
                    out=os.path.join(out, "evaluate"), jobs=jobs, seed=seed))
    print("[6/6] history-match")
    cmd_history_match(ns(config=args.config, truth=os.path.join(out, "truth.geom"),
                         basis=os.path.join(out, "basis.pcab"),
                         checkpoints=os.path.join(out, "checkpoints"),
                         dataset=os.path.join(out, "dataset"),
                         out=os.path.join(out, "history_match"), seed=seed))
    print(f"all stages complete under {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="surroflow",
        description="surrogate-accelerated reservoir workbench")
    parser.add_argument("--version", action="version", version=FORMAT_VERSIONS)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True,
                       help="experiment JSON (path or packaged name like 'desk')")
        p.add_argument("--seed", type=int, default=None, help="override config seed")

    p = sub.add_parser("generate", help="write geomodel realizations and the PCA basis")
    common(p)
    p.add_argument("--count", type=int, default=None, help="training realizations to write")
    p.add_argument("--out", default=None, help="output root (default: config out_dir)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("simulate", help="simulate models into a training dataset")
    common(p)
    p.add_argument("--models", default=None, help="directory of GEOM files")
    p.add_argument("--out", default=None, help="dataset output directory")
    p.add_argument("--out-root", default=None, help=argparse.SUPPRESS)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--dry-run", action="store_true",
                   help="print the report schedule without simulating")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train one surrogate network")
    common(p)
    p.add_argument("--dataset", default=None, help="dataset manifest directory")
    p.add_argument("--target", required=True, choices=("pressure", "saturation"))
    p.add_argument("--out", default=None, help="checkpoint file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="compare the surrogate against the simulator")
    common(p)
    p.add_argument("--checkpoints", default=None, help="checkpoint directory")
    p.add_argument("--test-models", default=None, help="directory of held-out GEOM files")
    p.add_argument("--dataset", default=None, help="training dataset directory (normalizer)")
    p.add_argument("--out", default=None, help="metrics output directory")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("history-match", help="RML assimilation of the truth case")
    common(p)
    p.add_argument("--truth", default=None, help="truth GEOM file")
    p.add_argument("--basis", default=None, help="PCA basis file")
    p.add_argument("--checkpoints", default=None, help="checkpoint directory")
    p.add_argument("--dataset", default=None, help="training dataset directory")
    p.add_argument("--out", default=None, help="posterior output directory")
    p.set_defaults(func=cmd_history_match)

    p = sub.add_parser("run-all", help="run the whole chain on one config")
    common(p)
    p.add_argument("--out", default=None, help="output root (default: config out_dir)")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_run_all)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (sim.SimulationDiverged, pl.TrainingDiverged) as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 3
    except (RuntimeError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Acceptance suite: one test per criterion, names match the criterion list.

Each test is self-contained apart from the session-scoped desk experiment,
which chains the packaged desk config through every command once and is
shared by the generalization and assimilation criteria. Stage wall times are
recorded so the runtime bounds are asserted, not assumed.
"""

import json
import os
import time

import numpy as np
import pytest

import surroflow.assimilate as am
import surroflow.cli as cli
import surroflow.evaluate as ev
import surroflow.geomodel as gm
import surroflow.network as net
import surroflow.pipeline as pl
import surroflow.simulator as sim
from surroflow import autodiff as ad

from gradcheck import check_network_gradients


# ---------------------------------------------------------------------------
# shared desk-scale experiment
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def desk_artifacts(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("desk_acceptance") / "run")
    timings = {}

    def stage(name, argv):
        t0 = time.time()
        rc = cli.main(argv)
        timings[name] = time.time() - t0
        assert rc == 0, f"desk stage {name} exited {rc}"

    jobs = str(min(4, os.cpu_count() or 1))
    stage("generate", ["generate", "--config", "desk", "--out", out])
    stage("simulate", ["simulate", "--config", "desk", "--out-root", out,
                       "--jobs", jobs])
    dataset = os.path.join(out, "dataset")
    checkpoints = os.path.join(out, "checkpoints")
    for target in ("pressure", "saturation"):
        stage(f"train_{target}",
              ["train", "--config", "desk", "--dataset", dataset, "--target", target,
               "--out", os.path.join(checkpoints, f"{target}.netp")])
    stage("evaluate", ["evaluate", "--config", "desk", "--checkpoints", checkpoints,
                       "--dataset", dataset,
                       "--test-models", os.path.join(out, "test_models"),
                       "--out", os.path.join(out, "evaluate"), "--jobs", jobs])
    stage("history_match",
          ["history-match", "--config", "desk",
           "--truth", os.path.join(out, "truth.geom"),
           "--basis", os.path.join(out, "basis.pcab"),
           "--checkpoints", checkpoints, "--dataset", dataset,
           "--out", os.path.join(out, "history_match")])
    return out, timings


# ---------------------------------------------------------------------------
# 1. gradient fidelity
# ---------------------------------------------------------------------------

def test_criterion_01_gradient_fidelity():
    t0 = time.time()
    arch = net.ArchConfig(nx=8, ny=8, n_t=2, base_filters=4)
    worst = 0.0
    checked = 0
    for seed in range(20):
        w, n, _ = check_network_gradients(arch, seed, eps=1e-5, tol=1e-5)
        worst = max(worst, w)
        checked += n
    elapsed = time.time() - t0
    assert worst < 1e-5, f"worst relative gradient error {worst:.3e}"
    assert checked > 0
    assert elapsed < 300.0, f"gradient check took {elapsed:.0f}s, bound is 300s"


# ---------------------------------------------------------------------------
# 2. Buckley-Leverett oracle
# ---------------------------------------------------------------------------

def waterflood_config():
    grid = gm.GridSpec(nx=64, ny=1, dx=10.0, dy=10.0, dz=10.0)
    wells = (
        gm.WellSpec(id="I1", i=0, j=0, kind="injector", bhp_bar=330.0, facies=1),
        gm.WellSpec(id="P1", i=63, j=0, kind="producer", bhp_bar=320.0, facies=1),
    )
    fluids = sim.FluidProps(c_w_per_bar=0.0, c_o_per_bar=0.0, c_mu_o_per_bar=0.0)
    config = sim.SimConfig(
        grid=grid, wells=wells, fluids=fluids,
        report_times_days=tuple(float(t) for t in range(25, 501, 25)),
        newton_tol=1e-10, dt_max_days=5.0)
    model = gm.GeoModel(grid=grid, facies=np.ones((64, 1), dtype=int),
                        perm_md=np.full((64, 1), 500.0), a_md=500.0, b=0.0)
    return model, config


def welge_front_speed(fluids, s_wi):
    corey = fluids.corey
    s = np.linspace(s_wi + 1e-9, 1.0 - corey.s_or, 200001)
    krw = sim.relperm(s, corey)[0]
    kro = sim.relperm(s, corey)[1]
    f_w = (krw / fluids.mu_w_cp) / (krw / fluids.mu_w_cp + kro / fluids.mu_o_ref_cp)
    speed = f_w / (s - s_wi)
    k = int(np.argmax(speed))
    return float(speed[k]), float(s[k])


def interpolated_front_position(s_profile, mid, dx):
    below = np.nonzero(s_profile <= mid)[0]
    if below.size == 0:
        return len(s_profile) * dx
    j = int(below[0])
    if j == 0:
        return 0.5 * dx
    s_hi, s_lo = s_profile[j - 1], s_profile[j]
    frac = (s_hi - mid) / (s_hi - s_lo)
    return (j - 1 + 0.5 + frac) * dx


def test_criterion_02_buckley_leverett_front():
    t0 = time.time()
    model, config = waterflood_config()
    states, _ = sim.simulate(model, config)
    fluids = config.fluids
    s_wi = config.s_w_init
    v_shock, s_front = welge_front_speed(fluids, s_wi)
    length = config.grid.nx * config.grid.dx

    pvi = np.array([float(np.mean(s) - s_wi) for s in states.saturation])
    assert pvi.min() < 0.25 and pvi.max() > 0.35, "sweep does not bracket 0.3 PVI"
    k = int(np.argmin(np.abs(pvi - 0.3)))
    x_sim = interpolated_front_position(
        states.saturation[k][:, 0], 0.5 * (s_front + s_wi), config.grid.dx)
    x_analytic = v_shock * pvi[k] * length
    err = abs(x_sim - x_analytic)
    elapsed = time.time() - t0
    assert err <= 0.05 * length, f"front error {err:.1f} m of {length:.0f} m domain"
    assert elapsed < 30.0, f"waterflood took {elapsed:.0f}s, bound is 30s"


# ---------------------------------------------------------------------------
# 3. conservation
# ---------------------------------------------------------------------------

def test_criterion_03_conservation():
    # incompressible: injected volume rate equals produced volume rate at
    # every report time (zero compressibility makes the flow divergence free)
    model, config = waterflood_config()
    _, rates = sim.simulate(model, config)
    inj_cols = [k for k, w in enumerate(config.wells) if w.kind == "injector"]
    prod_cols = [k for k, w in enumerate(config.wells) if w.kind == "producer"]
    for ti in range(len(rates.times_days)):
        injected = rates.q_w[ti, inj_cols].sum()
        produced = rates.q_w[ti, prod_cols].sum() + rates.q_o[ti, prod_cols].sum()
        assert injected > 0
        rel = abs(injected - produced) / injected
        assert rel <= 1e-8, f"rate imbalance {rel:.2e} at report {ti}"

    # compressible: closure bounded by the Newton tolerance
    grid = gm.GridSpec(nx=16, ny=16, dx=50.0, dy=50.0, dz=10.0)
    wells = (
        gm.WellSpec(id="I1", i=8, j=8, kind="injector", bhp_bar=330.0, facies=1),
        gm.WellSpec(id="P1", i=1, j=1, kind="producer", bhp_bar=320.0, facies=1),
        gm.WellSpec(id="P2", i=14, j=14, kind="producer", bhp_bar=320.0, facies=1),
    )
    model2 = gm.generate_channel_realization(grid, wells, seed=11)
    config2 = sim.SimConfig(grid=grid, wells=wells, fluids=sim.FluidProps())
    _, _, diag2 = sim.simulate_with_diagnostics(model2, config2)
    n_b = grid.nx * grid.ny
    gain = diag2.water_in_place_final_kg - diag2.water_in_place_initial_kg
    net_in = diag2.cum_inj_water_kg - diag2.cum_prod_water_kg
    pv_mass = grid.dx * grid.dy * grid.dz * config2.phi * config2.fluids.rho_w_ref
    defect = abs(gain - net_in) / pv_mass
    assert defect <= 10.0 * config2.newton_tol * n_b, \
        f"compressible closure defect {defect:.2e}"


# ---------------------------------------------------------------------------
# 4. normalization round trip
# ---------------------------------------------------------------------------

def test_criterion_04_normalization_round_trip():
    rng = np.random.default_rng(42)
    seqs = 300.0 + 60.0 * rng.random((100, 4, 12, 9))
    norm = pl.fit_normalizer(seqs)
    back = pl.inverse_transform_pressure(pl.transform_pressure(seqs, norm), norm)
    assert np.max(np.abs(back - seqs)) <= 1e-10

    # two-sample hand case: values 325/327 -> mean 326, diffs -1/+1 -> {0, 1}
    hand = np.array([325.0, 327.0]).reshape(2, 1, 1, 1)
    nh = pl.fit_normalizer(hand)
    order = pl.transform_pressure(hand, nh)
    assert np.array_equal(order.ravel(), [0.0, 1.0])
    assert np.array_equal(pl.inverse_transform_pressure(order, nh), hand)


# ---------------------------------------------------------------------------
# 5. overfit capability
# ---------------------------------------------------------------------------

def test_criterion_05_overfit_single_sample():
    t0 = time.time()
    grid = gm.GridSpec(nx=16, ny=16, dx=50.0, dy=50.0, dz=10.0)
    wells = (
        gm.WellSpec(id="I1", i=8, j=8, kind="injector", bhp_bar=330.0, facies=1),
        gm.WellSpec(id="P1", i=2, j=2, kind="producer", bhp_bar=320.0, facies=1),
        gm.WellSpec(id="P2", i=13, j=13, kind="producer", bhp_bar=320.0, facies=1),
    )
    models = [gm.generate_channel_realization(grid, wells, seed=s) for s in (3, 4)]
    config = sim.SimConfig(grid=grid, wells=wells, fluids=sim.FluidProps(),
                           report_times_days=(100.0, 400.0, 1000.0))
    dataset = pl.build_dataset(models, config)
    one = pl.TrainingSet(
        inputs=dataset.inputs[:1], targets_p=dataset.targets_p[:1],
        targets_s=dataset.targets_s[:1], well_blocks=dataset.well_blocks,
        normalizer=dataset.normalizer, models=dataset.models[:1],
        states=dataset.states[:1], rates=dataset.rates[:1], wells=dataset.wells,
        report_times_days=dataset.report_times_days, skipped=0,
        logk_mean=dataset.logk_mean, logk_std=dataset.logk_std)

    arch = net.ArchConfig(nx=16, ny=16, n_t=3, base_filters=8)
    for target in ("pressure", "saturation"):
        probe = pl.TrainConfig(epochs=1, batch=1, seed=5)
        _, first = pl.train(one, arch, probe, target)
        l0 = first[0]
        cfg = pl.TrainConfig(epochs=3000, batch=1, seed=5, stop_loss=1e-3 * l0)
        _, history = pl.train(one, arch, cfg, target)
        assert min(history) <= 1e-3 * l0, \
            f"{target} loss stalled at {min(history):.3e} from {l0:.3e}"
        assert len(history) <= 3000
    elapsed = time.time() - t0
    assert elapsed < 1200.0, f"overfit took {elapsed:.0f}s, bound is 1200s"


# ---------------------------------------------------------------------------
# 6. desk-scale generalization
# ---------------------------------------------------------------------------

def test_criterion_06_desk_generalization(desk_artifacts):
    out, timings = desk_artifacts
    with open(os.path.join(out, "evaluate", "metrics.json")) as f:
        metrics = json.load(f)
    for key in ("delta_s", "delta_p", "delta_r_oil", "delta_r_water", "delta_r_inj"):
        assert np.isfinite(metrics[key]), f"{key} is not finite"
    rows = open(os.path.join(out, "evaluate", "percentiles.csv")).read().splitlines()
    assert len(rows) > 1
    for row in rows[1:]:
        _, _, p10, p50, p90 = row.split(",")
        assert float(p10) <= float(p50) <= float(p90)
    assert metrics["delta_s"] < 0.15, f"test delta_s = {metrics['delta_s']:.4f}"
    pipeline_time = sum(t for name, t in timings.items() if name != "history_match")
    assert pipeline_time < 7200.0, f"pipeline took {pipeline_time:.0f}s, bound is 7200s"


# ---------------------------------------------------------------------------
# 7. rate reconstruction
# ---------------------------------------------------------------------------

def test_criterion_07_rate_reconstruction():
    cfg = cli.load_config("desk")
    model = gm.generate_channel_realization(cfg.grid, cfg.wells, seed=33)
    states, rates = sim.simulate(model, cfg.sim_config)
    again = ev.rates_from_states(states, model, cfg.wells, cfg.sim_config.fluids)
    scale = np.maximum(np.abs(rates.q_o), 1e-30)
    assert np.all(np.abs(again.q_o - rates.q_o) / scale <= 1e-10)
    scale = np.maximum(np.abs(rates.q_w), 1e-30)
    assert np.all(np.abs(again.q_w - rates.q_w) / scale <= 1e-10)


# ---------------------------------------------------------------------------
# 8. MADS
# ---------------------------------------------------------------------------

def test_criterion_08_mads_bowl():
    centers = [np.array([0.3, -0.7, 1.1, 0.05, -0.4]),
               np.array([-0.9, 0.4, 0.0, 1.3, -0.2])]
    for center in centers:
        evals = []

        def f(x):
            evals.append(1)
            return float(np.sum((x - center) ** 2))

        xi, fb, trace = am.mads_minimize(f, np.zeros(5), max_iter=200, delta_0=0.5)
        assert fb < 1e-6, f"bowl objective stalled at {fb:.2e}"
        objs = [t["objective"] for t in trace]
        assert all(b <= a for a, b in zip(objs, objs[1:])), "incumbent increased"
        counts = [t["evaluations"] for t in trace]
        assert counts[0] == 1
        assert all(b - a == 10 for a, b in zip(counts, counts[1:])), \
            "poll did not use exactly 2l evaluations"
        assert len(evals) == counts[-1]


# ---------------------------------------------------------------------------
# 9. RML desk-scale assimilation
# ---------------------------------------------------------------------------

def test_criterion_09_rml_assimilation(desk_artifacts):
    out, timings = desk_artifacts
    rows = open(os.path.join(out, "history_match", "posteriors.csv")).read().splitlines()
    ok = [row.split(",") for row in rows[1:] if row.split(",")[5] == "0"]
    assert len(ok) >= 5, "too many failed RML runs"
    posterior = np.median([float(r[2]) for r in ok])
    prior = np.median([float(r[4]) for r in ok])
    assert posterior <= prior / 3.0, \
        f"median misfit only improved {prior:.4g} -> {posterior:.4g}"
    assert timings["history_match"] < 3600.0, \
        f"history match took {timings['history_match']:.0f}s, bound is 3600s"

    # truth inside the PCA span, zero noise, started at truth: stays put
    cfg = cli.load_config("desk")
    basis = gm.read_pca_basis(os.path.join(out, "basis.pcab"))
    xi_truth = 0.3 * np.where(np.arange(basis.n_xi) % 2 == 0, 1.0, -1.0)
    truth = gm.sample_model(basis, xi_truth, cfg.wells)
    obs = am.make_observations(truth, cfg.sim_config, 0.0,
                               cfg.history_horizon_days, seed=1)
    problem = am.RmlProblem(basis=basis, wells=cfg.wells, sim_config=cfg.sim_config,
                            obs=obs, forward="simulator", n_r=1, max_iter=1,
                            delta_0=0.5)
    problem.perturbations = [(obs.d_obs.copy(), xi_truth.copy())]
    res = am.run_single(problem, 0, xi_start=xi_truth)
    assert res.data_misfit < 1e-8, f"misfit at truth {res.data_misfit:.2e}"
    assert np.array_equal(res.xi, xi_truth)


# ---------------------------------------------------------------------------
# 10. architecture parity
# ---------------------------------------------------------------------------

def test_criterion_10_architecture_parity():
    arch = net.ArchConfig(nx=80, ny=80, n_t=10, base_filters=16)
    count = sum(int(np.prod(s)) for _, s in net.parameter_shapes(arch))
    assert count == 2607057
    assert abs(count - 2.6e6) <= 0.2 * 2.6e6

    ps = net.init_params(arch, 0)
    tape = ad.Tape()
    x = ad.Tensor(np.random.default_rng(0).standard_normal((1, 2, 80, 80)))
    *_, f5 = net.encode(tape, x, ps, arch, mode="eval")
    assert f5.data.shape == (1, 128, 20, 20)  # 128 channels on a 20x20 map


# ---------------------------------------------------------------------------
# 11. determinism of the full chain
# ---------------------------------------------------------------------------

def test_criterion_11_run_all_determinism(tmp_path):
    dir_a, dir_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert cli.main(["run-all", "--config", "smoke", "--out", dir_a, "--jobs", "2"]) == 0
    assert cli.main(["run-all", "--config", "smoke", "--out", dir_b, "--jobs", "1"]) == 0

    def tree(root):
        out = {}
        for base, _, files in os.walk(root):
            for f in files:
                p = os.path.join(base, f)
                with open(p, "rb") as fh:
                    out[os.path.relpath(p, root)] = fh.read()
        return out

    ta, tb = tree(dir_a), tree(dir_b)
    assert set(ta) == set(tb)
    mismatched = [k for k in ta if ta[k] != tb[k]]
    assert mismatched == [], f"artifacts differ: {mismatched[:5]}"
    kinds = {os.path.splitext(k)[1] for k in ta}
    assert {".geom", ".rstf", ".netp", ".csv", ".json", ".pcab"} <= kinds

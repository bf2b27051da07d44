import numpy as np
import pytest

import surroflow.evaluate as ev
import surroflow.geomodel as gm
import surroflow.simulator as sim


# ---------------------------------------------------------------------------
# delta metrics
# ---------------------------------------------------------------------------

def test_saturation_error_hand_example():
    assert ev.saturation_error([[0.6]], [[0.5]]) == pytest.approx(0.2, rel=1e-12)
    assert ev.saturation_error([[0.5]], [[0.5]]) == 0.0


def test_saturation_error_rejects_nonpositive_sim():
    with pytest.raises(ValueError, match="positive"):
        ev.saturation_error([[0.5]], [[0.0]])
    with pytest.raises(ValueError, match="shape"):
        ev.saturation_error([[0.5, 0.4]], [[0.5]])


def test_pressure_error_hand_example():
    sim_p = np.array([[320.0, 330.0]])
    surr = np.array([[321.0, 330.0]])
    assert ev.pressure_error(surr, sim_p) == pytest.approx(0.05, rel=1e-12)
    assert ev.pressure_error(sim_p, sim_p) == 0.0


def test_pressure_error_scale_invariance():
    rng = np.random.default_rng(0)
    sim_p = 325.0 + rng.normal(size=(3, 2, 4, 4))
    surr = sim_p + 0.3 * rng.normal(size=sim_p.shape)
    base = ev.pressure_error(surr, sim_p)
    scaled = ev.pressure_error(3.7 * surr, 3.7 * sim_p)
    assert scaled == pytest.approx(base, rel=1e-12)


def test_pressure_error_zero_range():
    with pytest.raises(ValueError, match="range"):
        ev.pressure_error(np.ones((2, 2)), np.ones((2, 2)))


def test_rate_error_hand_example():
    assert ev.rate_error([10.0], [9.0]) == pytest.approx(0.1, rel=1e-12)
    assert ev.rate_error([9.0], [9.0]) == 0.0
    assert ev.rate_error(np.zeros((2, 0)), np.zeros((2, 0))) == 0.0


def test_metrics_positive_unless_identical():
    rng = np.random.default_rng(1)
    sim_s = rng.uniform(0.2, 0.8, size=(2, 3, 4))
    assert ev.saturation_error(sim_s + 1e-6, sim_s) > 0.0


# ---------------------------------------------------------------------------
# rate reconstruction
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_run():
    grid = gm.GridSpec(nx=8, ny=8, dx=50.0, dy=50.0, dz=10.0)
    wells = (
        gm.WellSpec(id="I1", i=4, j=4, kind="injector", bhp_bar=330.0, facies=1),
        gm.WellSpec(id="P1", i=0, j=0, kind="producer", bhp_bar=320.0, facies=1),
        gm.WellSpec(id="P2", i=7, j=7, kind="producer", bhp_bar=320.0, facies=1),
    )
    model = gm.generate_channel_realization(grid, wells, seed=11)
    config = sim.SimConfig(grid=grid, wells=wells, fluids=sim.FluidProps(),
                           report_times_days=(50.0, 150.0, 300.0))
    states, rates = sim.simulate(model, config)
    return model, config, states, rates


def test_rates_from_states_identity(small_run):
    model, config, states, rates = small_run
    rebuilt = ev.rates_from_states(states, model, config.wells, config.fluids)
    for got, want in ((rebuilt.q_o, rates.q_o), (rebuilt.q_w, rates.q_w)):
        denom = np.maximum(np.abs(want), 1e-30)
        assert np.max(np.abs(got - want) / denom) <= 1e-10


def test_rates_from_states_clamps_saturation(small_run):
    model, config, states, rates = small_run
    fl = config.fluids
    w = config.wells[1]
    k = model.perm_md[w.i, w.j]
    a = sim.well_rates_from_state(326.0, 1.03, w, k, config.grid, fl)
    b = sim.well_rates_from_state(326.0, 1.0, w, k, config.grid, fl)
    assert a == b


def test_zero_drawdown_zero_rate(small_run):
    model, config, _, _ = small_run
    w = config.wells[1]
    q_o, q_w = sim.well_rates_from_state(w.bhp_bar, 0.5, w, 100.0, config.grid, config.fluids)
    assert q_o == 0.0 and q_w == 0.0


# ---------------------------------------------------------------------------
# percentiles
# ---------------------------------------------------------------------------

def test_percentiles_enumerated_example():
    values = np.arange(1, 101, dtype=float)[:, None]
    res = ev.percentiles("q", [10.0], np.random.default_rng(2).permutation(values))
    assert res.p10[0] == 10.0
    assert res.p50[0] == 50.0
    assert res.p90[0] == 90.0
    assert res.n_e == 100


def test_percentiles_constant_ensemble():
    res = ev.percentiles("q", [1.0, 2.0], np.full((12, 2), 7.5))
    assert np.all(res.p10 == 7.5) and np.all(res.p50 == 7.5) and np.all(res.p90 == 7.5)


def test_percentile_ordering_random():
    rng = np.random.default_rng(3)
    res = ev.percentiles("q", np.arange(5.0), rng.normal(size=(37, 5)))
    assert np.all(res.p10 <= res.p50)
    assert np.all(res.p50 <= res.p90)
    assert np.all(np.diff(res.sorted_values, axis=0) >= 0)


def test_percentiles_require_ten_members():
    with pytest.raises(ValueError, match="at least 10"):
        ev.percentiles("q", [1.0], np.zeros((9, 1)))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def example_metrics():
    return {
        "delta_s": 0.05, "delta_p": 0.01, "delta_r_oil": 0.06,
        "delta_r_water": 0.05, "delta_r_inj": 0.03,
        "n_e": 32, "n_t": 5, "n_b": 256,
    }


def test_metrics_json_roundtrip(tmp_path):
    path = tmp_path / "metrics.json"
    ev.write_metrics_json(path, example_metrics())
    back = ev.read_metrics_json(path)
    assert back == example_metrics()
    ev.write_metrics_json(tmp_path / "again.json", example_metrics())
    assert path.read_bytes() == (tmp_path / "again.json").read_bytes()
    with pytest.raises(ValueError, match="missing"):
        ev.write_metrics_json(tmp_path / "bad.json", {"delta_s": 0.1})


def test_percentiles_csv(tmp_path):
    rng = np.random.default_rng(4)
    results = [
        ev.percentiles("qo:P1", [50.0, 100.0], rng.normal(size=(11, 2))),
        ev.percentiles("qw:I1", [50.0, 100.0], rng.normal(size=(11, 2))),
    ]
    path = tmp_path / "pct.csv"
    ev.write_percentiles_csv(path, results)
    lines = path.read_text().splitlines()
    assert lines[0] == "quantity,time_days,p10,p50,p90"
    assert len(lines) == 1 + 4
    for line in lines[1:]:
        parts = line.split(",")
        assert float(parts[2]) <= float(parts[3]) <= float(parts[4])
    ev.write_percentiles_csv(tmp_path / "again.csv", results)
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_evaluate_ensemble_zero_for_identical(small_run):
    model, config, states, rates = small_run
    surr_states = [states, states]
    surr_rates = [rates, rates]
    metrics = ev.evaluate_ensemble(surr_states, surr_states, surr_rates, surr_rates,
                                   config.wells)
    assert metrics["delta_s"] == 0.0
    assert metrics["delta_p"] == 0.0
    assert metrics["delta_r_oil"] == 0.0
    assert metrics["delta_r_water"] == 0.0
    assert metrics["delta_r_inj"] == 0.0
    assert metrics["n_e"] == 2 and metrics["n_t"] == 3 and metrics["n_b"] == 64


def test_rate_ensembles_shapes(small_run):
    model, config, states, rates = small_run
    rates_list = [rates] * 10
    results = ev.rate_ensembles(rates_list, config.wells, "sim:")
    # one qw series per well plus one qo series per producer
    assert len(results) == len(config.wells) + 2
    names = {r.quantity for r in results}
    assert "sim:qo:P1" in names and "sim:qw:I1" in names
    for r in results:
        assert np.all(r.p10 <= r.p50) and np.all(r.p50 <= r.p90)

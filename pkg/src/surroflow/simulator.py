"""Fully-implicit finite-volume solver for 2D immiscible oil-water flow.

Two-point flux approximation with harmonic inter-block transmissibility,
phase-potential upwinding, backward-Euler accumulation with weakly
compressible fluids, BHP-controlled Peaceman wells, Newton iteration with
an analytic Jacobian and adaptive time stepping.

Units: SI internally; bar / days / md / cp at every public interface.
No capillary pressure, no gravity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from io import StringIO

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geomodel import GridSpec, validate_wells

MD_TO_M2 = 9.869233e-16
CP_TO_PAS = 1e-3
BAR_TO_PA = 1e5
DAY_TO_S = 86400.0


@dataclass(frozen=True)
class CoreyParams:
    s_wc: float = 0.1
    s_or: float = 0.2
    n_w: float = 2.0
    n_o: float = 2.0
    k_rw_max: float = 0.7
    k_ro_max: float = 0.9

    def __post_init__(self):
        if not (0.0 <= self.s_wc + self.s_or < 1.0):
            raise ValueError("need 0 <= S_wc + S_or < 1")
        if self.n_w < 1 or self.n_o < 1:
            raise ValueError("Corey exponents must be >= 1")
        if self.k_rw_max <= 0 or self.k_ro_max <= 0:
            raise ValueError("endpoint relative permeabilities must be positive")


@dataclass(frozen=True)
class FluidProps:
    mu_w_cp: float = 0.31
    mu_o_ref_cp: float = 0.29
    c_mu_o_per_bar: float = 5e-4
    rho_w_ref: float = 1000.0
    rho_o_ref: float = 800.0
    c_w_per_bar: float = 4e-5
    c_o_per_bar: float = 1e-4
    p_ref_bar: float = 325.0
    corey: CoreyParams = field(default_factory=CoreyParams)

    def __post_init__(self):
        if self.mu_w_cp <= 0 or self.mu_o_ref_cp <= 0:
            raise ValueError("viscosities must be positive")
        if self.rho_w_ref <= 0 or self.rho_o_ref <= 0:
            raise ValueError("densities must be positive")


@dataclass(frozen=True)
class SimConfig:
    grid: GridSpec
    wells: tuple
    fluids: FluidProps
    phi: float = 0.2
    s_w_init: float = 0.1
    p_init_bar: float = 325.0
    report_times_days: tuple = (50, 100, 150, 200, 300, 400, 550, 700, 850, 1000)
    newton_tol: float = 1e-8
    max_newton: int = 12
    dt_init_days: float = 1.0
    dt_max_days: float = 50.0
    dt_min_days: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "wells", tuple(self.wells))
        object.__setattr__(self, "report_times_days", tuple(float(t) for t in self.report_times_days))
        times = self.report_times_days
        if not times or times[0] <= 0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("report times must be strictly increasing and start above 0")
        if not (0 < self.phi < 1):
            raise ValueError("porosity must lie in (0, 1)")
        if not (0 <= self.s_w_init <= 1):
            raise ValueError("initial water saturation must lie in [0, 1]")
        validate_wells(self.wells, self.grid)

    @property
    def n_t(self):
        return len(self.report_times_days)


@dataclass
class StateSequence:
    times_days: np.ndarray  # (n_t,)
    pressure_bar: np.ndarray  # (n_t, nx, ny)
    saturation: np.ndarray  # (n_t, nx, ny)


@dataclass
class WellRates:
    times_days: np.ndarray  # (n_t,)
    well_ids: list
    q_o: np.ndarray  # (n_t, n_wells), surface m3/day, production/injection positive
    q_w: np.ndarray


@dataclass
class SimDiagnostics:
    time_steps: int = 0
    newton_iterations: int = 0
    wasted_steps: int = 0
    cum_inj_water_kg: float = 0.0
    cum_prod_water_kg: float = 0.0
    cum_prod_oil_kg: float = 0.0
    water_in_place_initial_kg: float = 0.0
    water_in_place_final_kg: float = 0.0


class SimulationDiverged(RuntimeError):
    def __init__(self, message, last_time_days):
        super().__init__(message)
        self.last_time_days = last_time_days


# ---------------------------------------------------------------------------
# constitutive relations
# ---------------------------------------------------------------------------

def relperm(s_w, corey):
    """Corey relative permeabilities (k_rw, k_ro) for S_w in [0, 1]."""
    s = np.clip((np.asarray(s_w, dtype=np.float64) - corey.s_wc) / (1.0 - corey.s_wc - corey.s_or), 0.0, 1.0)
    k_rw = corey.k_rw_max * s**corey.n_w
    k_ro = corey.k_ro_max * (1.0 - s) ** corey.n_o
    return k_rw, k_ro


def relperm_deriv(s_w, corey):
    """d(k_rw)/dS_w and d(k_ro)/dS_w, zero outside the mobile window."""
    span = 1.0 - corey.s_wc - corey.s_or
    s_raw = (np.asarray(s_w, dtype=np.float64) - corey.s_wc) / span
    inside = (s_raw > 0.0) & (s_raw < 1.0)
    s = np.clip(s_raw, 0.0, 1.0)
    dk_rw = np.where(inside, corey.k_rw_max * corey.n_w * s ** (corey.n_w - 1.0) / span, 0.0)
    dk_ro = np.where(inside, -corey.k_ro_max * corey.n_o * (1.0 - s) ** (corey.n_o - 1.0) / span, 0.0)
    return dk_rw, dk_ro


def _density(p_pa, rho_ref, c_per_pa, p_ref_pa):
    return rho_ref * np.exp(c_per_pa * (p_pa - p_ref_pa))


def _viscosities(p_pa, fl):
    """(mu_w, mu_o, dmu_o/dp) in Pa*s."""
    mu_w = fl.mu_w_cp * CP_TO_PAS
    c_mu = fl.c_mu_o_per_bar / BAR_TO_PA
    mu_o_ref = fl.mu_o_ref_cp * CP_TO_PAS
    p_ref = fl.p_ref_bar * BAR_TO_PA
    mu_o = mu_o_ref * (1.0 + c_mu * (p_pa - p_ref))
    if np.any(mu_o <= 0):
        raise FloatingPointError("oil viscosity went non-positive; pressure left the model's validity range")
    return mu_w, mu_o, mu_o_ref * c_mu


def well_index(k_block_md, grid, r_w):
    """Peaceman WI = 2*pi*k*dz / ln(r_0/r_w), r_0 = 0.14*sqrt(dx^2+dy^2); SI."""
    if k_block_md <= 0:
        raise ValueError("well-block permeability must be positive")
    r_0 = 0.14 * np.sqrt(grid.dx**2 + grid.dy**2)
    if r_w >= r_0:
        raise ValueError("well radius exceeds equivalent radius")
    return 2.0 * np.pi * (k_block_md * MD_TO_M2) * grid.dz / np.log(r_0 / r_w)


def well_rates_from_state(p_block_bar, s_w_block, well, k_block_md, grid, fluids):
    """Surface rates (q_o, q_w) in m3/day from one well-block state.

    Producers report each phase's Peaceman mass rate divided by its
    reference density; injectors inject water with total block mobility
    and report q_o = 0.  Saturation is clamped to [0, 1] first.
    """
    wi = well_index(k_block_md, grid, well.rw_m)
    p = float(p_block_bar) * BAR_TO_PA
    pw = well.bhp_bar * BAR_TO_PA
    p_ref = fluids.p_ref_bar * BAR_TO_PA
    s = min(max(float(s_w_block), 0.0), 1.0)
    k_rw, k_ro = relperm(s, fluids.corey)
    mu_w, mu_o, _ = _viscosities(np.array(p), fluids)
    rho_w = _density(p, fluids.rho_w_ref, fluids.c_w_per_bar / BAR_TO_PA, p_ref)
    rho_o = _density(p, fluids.rho_o_ref, fluids.c_o_per_bar / BAR_TO_PA, p_ref)
    if well.kind == "producer":
        dp = p - pw
        q_w = wi * (k_rw / mu_w) * rho_w * dp / fluids.rho_w_ref * DAY_TO_S
        q_o = wi * (k_ro / float(mu_o)) * rho_o * dp / fluids.rho_o_ref * DAY_TO_S
    else:
        dp = pw - p
        lam_t = k_rw / mu_w + k_ro / float(mu_o)
        q_w = wi * lam_t * rho_w * dp / fluids.rho_w_ref * DAY_TO_S
        q_o = 0.0
    return float(q_o), float(q_w)


# ---------------------------------------------------------------------------
# implicit solver
# ---------------------------------------------------------------------------

class _System:
    """Precomputed grid topology, transmissibilities, and well couplings."""

    def __init__(self, model, config):
        grid = config.grid
        nx, ny = grid.nx, grid.ny
        self.nc = nx * ny
        self.fl = config.fluids
        self.pv = config.phi * grid.dx * grid.dy * grid.dz
        self.p_ref = self.fl.p_ref_bar * BAR_TO_PA
        self.c_w = self.fl.c_w_per_bar / BAR_TO_PA
        self.c_o = self.fl.c_o_per_bar / BAR_TO_PA

        k_si = model.perm_md.astype(np.float64) * MD_TO_M2
        idx = np.arange(self.nc).reshape(nx, ny)
        faces_L, faces_R, geo = [], [], []
        if nx > 1:
            faces_L.append(idx[:-1, :].ravel())
            faces_R.append(idx[1:, :].ravel())
            geo.append(np.full((nx - 1) * ny, grid.dy * grid.dz / grid.dx))
        if ny > 1:
            faces_L.append(idx[:, :-1].ravel())
            faces_R.append(idx[:, 1:].ravel())
            geo.append(np.full(nx * (ny - 1), grid.dx * grid.dz / grid.dy))
        if faces_L:
            self.face_l = np.concatenate(faces_L)
            self.face_r = np.concatenate(faces_R)
            geo = np.concatenate(geo)
            k_flat = k_si.ravel()
            k_l, k_r = k_flat[self.face_l], k_flat[self.face_r]
            self.trans = 2.0 * geo * k_l * k_r / (k_l + k_r)
        else:
            self.face_l = np.zeros(0, dtype=int)
            self.face_r = np.zeros(0, dtype=int)
            self.trans = np.zeros(0)

        self.wells = list(config.wells)
        self.w_cell = np.array([w.i * ny + w.j for w in self.wells], dtype=int)
        self.w_inj = np.array([w.kind == "injector" for w in self.wells])
        self.w_pw = np.array([w.bhp_bar * BAR_TO_PA for w in self.wells])
        self.wi = np.array(
            [well_index(model.perm_md[w.i, w.j], grid, w.rw_m) for w in self.wells]
        )

    def props(self, p, s):
        fl = self.fl
        rho_w = _density(p, fl.rho_w_ref, self.c_w, self.p_ref)
        rho_o = _density(p, fl.rho_o_ref, self.c_o, self.p_ref)
        mu_w, mu_o, dmu_o = _viscosities(p, fl)
        k_rw, k_ro = relperm(s, fl.corey)
        dk_rw, dk_ro = relperm_deriv(s, fl.corey)
        m_w = rho_w * k_rw / mu_w
        m_o = rho_o * k_ro / mu_o
        return {
            "rho_w": rho_w, "rho_o": rho_o,
            "m_w": m_w, "m_o": m_o,
            # d(rho*kr/mu)/dp and /dS per phase
            "dm_w_dp": self.c_w * m_w,
            "dm_o_dp": m_o * (self.c_o - dmu_o / mu_o),
            "dm_w_ds": rho_w * dk_rw / mu_w,
            "dm_o_ds": rho_o * dk_ro / mu_o,
            "mu_w": mu_w, "mu_o": mu_o, "dmu_o": dmu_o,
            "k_rw": k_rw, "k_ro": k_ro, "dk_rw": dk_rw, "dk_ro": dk_ro,
        }

    def well_mass_rates(self, p, s):
        """Per-well (water, oil) mass rates in kg/s, positive out of the cell
        for producers and into the cell for injectors, plus derivatives."""
        pr = self.props(p[self.w_cell], s[self.w_cell])
        dp_prod = p[self.w_cell] - self.w_pw
        dp_inj = self.w_pw - p[self.w_cell]
        # producers: per-phase block mobility; injectors: total mobility, water only
        lam_t_rho = pr["m_w"] + pr["k_ro"] / pr["mu_o"] * pr["rho_w"]
        dlam_t_rho_dp = self.c_w * pr["m_w"] + pr["rho_w"] * (
            self.c_w * pr["k_ro"] / pr["mu_o"] - pr["k_ro"] * pr["dmu_o"] / pr["mu_o"] ** 2
        )
        dlam_t_rho_ds = pr["rho_w"] * (pr["dk_rw"] / pr["mu_w"] + pr["dk_ro"] / pr["mu_o"])
        out = {}
        out["w"] = np.where(self.w_inj, self.wi * lam_t_rho * dp_inj, self.wi * pr["m_w"] * dp_prod)
        out["o"] = np.where(self.w_inj, 0.0, self.wi * pr["m_o"] * dp_prod)
        out["dw_dp"] = np.where(
            self.w_inj,
            self.wi * (dlam_t_rho_dp * dp_inj - lam_t_rho),
            self.wi * (pr["dm_w_dp"] * dp_prod + pr["m_w"]),
        )
        out["do_dp"] = np.where(self.w_inj, 0.0, self.wi * (pr["dm_o_dp"] * dp_prod + pr["m_o"]))
        out["dw_ds"] = np.where(self.w_inj, self.wi * dlam_t_rho_ds * dp_inj, self.wi * pr["dm_w_ds"] * dp_prod)
        out["do_ds"] = np.where(self.w_inj, 0.0, self.wi * pr["dm_o_ds"] * dp_prod)
        return out


def _assemble(sys_, p, s, p_n, s_n, dt):
    """Residual (kg) and Jacobian for one backward-Euler step."""
    nc = sys_.nc
    pr = sys_.props(p, s)
    pr_n = sys_.props(p_n, s_n)

    r_w = sys_.pv * (pr["rho_w"] * s - pr_n["rho_w"] * s_n)
    r_o = sys_.pv * (pr["rho_o"] * (1.0 - s) - pr_n["rho_o"] * (1.0 - s_n))

    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    cell = np.arange(nc)
    # accumulation
    put(cell, cell, sys_.pv * s * sys_.c_w * pr["rho_w"])
    put(cell, nc + cell, np.full(nc, sys_.pv) * pr["rho_w"])
    put(nc + cell, cell, sys_.pv * (1.0 - s) * sys_.c_o * pr["rho_o"])
    put(nc + cell, nc + cell, -np.full(nc, sys_.pv) * pr["rho_o"])

    if sys_.face_l.size:
        l, r = sys_.face_l, sys_.face_r
        dp = p[r] - p[l]
        up = np.where(dp > 0.0, r, l)
        t = sys_.trans
        for phase, row_off in (("w", 0), ("o", nc)):
            m_up = pr[f"m_{phase}"][up]
            dm_dp_up = pr[f"dm_{phase}_dp"][up]
            dm_ds_up = pr[f"dm_{phase}_ds"][up]
            flux = t * m_up * dp  # into l
            r_vec = r_w if phase == "w" else r_o
            np.subtract.at(r_vec, l, dt * flux)
            np.add.at(r_vec, r, dt * flux)
            df_dpl = t * (-m_up + np.where(up == l, dm_dp_up, 0.0) * dp)
            df_dpr = t * (m_up + np.where(up == r, dm_dp_up, 0.0) * dp)
            df_dsu = t * dm_ds_up * dp
            put(row_off + l, l, -dt * df_dpl)
            put(row_off + l, r, -dt * df_dpr)
            put(row_off + l, nc + up, -dt * df_dsu)
            put(row_off + r, l, dt * df_dpl)
            put(row_off + r, r, dt * df_dpr)
            put(row_off + r, nc + up, dt * df_dsu)

    if sys_.wells:
        wr = sys_.well_mass_rates(p, s)
        c = sys_.w_cell
        sign = np.where(sys_.w_inj, -1.0, 1.0)  # producers remove mass, injectors add
        np.add.at(r_w, c, dt * sign * wr["w"])
        np.add.at(r_o, c, dt * sign * wr["o"])
        put(c, c, dt * sign * wr["dw_dp"])
        put(c, nc + c, dt * sign * wr["dw_ds"])
        put(nc + c, c, dt * sign * wr["do_dp"])
        put(nc + c, nc + c, dt * sign * wr["do_ds"])

    resid = np.concatenate([r_w, r_o])
    jac = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * nc, 2 * nc),
    ).tocsc()
    return resid, jac


def _scaled_norm(resid, sys_):
    nc = sys_.nc
    scale_w = sys_.pv * sys_.fl.rho_w_ref
    scale_o = sys_.pv * sys_.fl.rho_o_ref
    return max(
        np.max(np.abs(resid[:nc])) / scale_w,
        np.max(np.abs(resid[nc:])) / scale_o,
    )


def _newton_step(sys_, p_n, s_n, dt, config, diag):
    """One backward-Euler step; returns (p, s) or None on failure."""
    nc = sys_.nc
    p, s = p_n.copy(), s_n.copy()
    for it in range(config.max_newton + 1):
        resid, jac = _assemble(sys_, p, s, p_n, s_n, dt)
        if not np.all(np.isfinite(resid)):
            return None
        if _scaled_norm(resid, sys_) <= config.newton_tol:
            return p, s
        if it == config.max_newton:
            return None
        try:
            dx = spla.spsolve(jac, -resid)
        except RuntimeError:
            return None
        if not np.all(np.isfinite(dx)):
            return None
        diag.newton_iterations += 1
        dp, ds = dx[:nc], dx[nc:]
        damp = 1.0
        max_ds = np.max(np.abs(ds))
        if max_ds > 0.3:
            damp = min(damp, 0.3 / max_ds)
        max_dp = np.max(np.abs(dp))
        if max_dp > 50.0 * BAR_TO_PA:
            damp = min(damp, 50.0 * BAR_TO_PA / max_dp)
        p = p + damp * dp
        s = np.clip(s + damp * ds, 0.0, 1.0)
    return None


def simulate(model, config):
    """Run to the last report time; returns (StateSequence, WellRates)."""
    states, rates, _ = simulate_with_diagnostics(model, config)
    return states, rates


def simulate_with_diagnostics(model, config):
    """simulate() plus step/iteration counts and cumulative well mass totals."""
    if model.grid != config.grid:
        raise ValueError("model grid does not match simulation grid")
    sys_ = _System(model, config)
    nc = sys_.nc
    fl = config.fluids

    p = np.full(nc, config.p_init_bar * BAR_TO_PA)
    s = np.full(nc, config.s_w_init)
    diag = SimDiagnostics()
    diag.water_in_place_initial_kg = float(
        np.sum(sys_.pv * _density(p, fl.rho_w_ref, sys_.c_w, sys_.p_ref) * s)
    )

    report = np.array(config.report_times_days, dtype=np.float64) * DAY_TO_S
    n_t = report.size
    pressures = np.zeros((n_t, config.grid.nx, config.grid.ny))
    saturations = np.zeros((n_t, config.grid.nx, config.grid.ny))

    t = 0.0
    dt_max = config.dt_max_days * DAY_TO_S
    dt = min(config.dt_init_days * DAY_TO_S, dt_max)
    dt_min = config.dt_min_days * DAY_TO_S
    i_rep = 0
    while i_rep < n_t:
        dt_step = min(dt, report[i_rep] - t)
        halved = False
        result = _newton_step(sys_, p, s, dt_step, config, diag)
        while result is None:
            diag.wasted_steps += 1
            dt_step *= 0.5
            halved = True
            if dt_step < dt_min:
                raise SimulationDiverged(
                    f"simulation diverged: Newton failed at t = {t / DAY_TO_S:.3f} days "
                    f"with dt below {config.dt_min_days} days",
                    last_time_days=t / DAY_TO_S,
                )
            result = _newton_step(sys_, p, s, dt_step, config, diag)
        p, s = result
        t += dt_step
        diag.time_steps += 1
        if sys_.wells:
            wr = sys_.well_mass_rates(p, s)
            inj = sys_.w_inj
            diag.cum_inj_water_kg += dt_step * float(np.sum(wr["w"][inj]))
            diag.cum_prod_water_kg += dt_step * float(np.sum(wr["w"][~inj]))
            diag.cum_prod_oil_kg += dt_step * float(np.sum(wr["o"][~inj]))
        # grow from the step that actually worked; a clip to land on a report
        # time is not a failure and must not shrink the working step size
        dt = min((dt_step if halved else dt) * 1.5, dt_max)
        if abs(t - report[i_rep]) < 1e-6:
            pressures[i_rep] = (p / BAR_TO_PA).reshape(config.grid.nx, config.grid.ny)
            saturations[i_rep] = s.reshape(config.grid.nx, config.grid.ny)
            i_rep += 1

    diag.water_in_place_final_kg = float(
        np.sum(sys_.pv * _density(p, fl.rho_w_ref, sys_.c_w, sys_.p_ref) * s)
    )

    states = StateSequence(
        times_days=np.array(config.report_times_days),
        pressure_bar=pressures,
        saturation=saturations,
    )
    rates = rates_from_state_sequence(states, model, config.wells, fl)
    return states, rates, diag


def rates_from_state_sequence(states, model, wells, fluids):
    """WellRates from report-time block states via well_rates_from_state."""
    n_t = states.pressure_bar.shape[0]
    q_o = np.zeros((n_t, len(wells)))
    q_w = np.zeros((n_t, len(wells)))
    for ti in range(n_t):
        for wi_, w in enumerate(wells):
            q_o[ti, wi_], q_w[ti, wi_] = well_rates_from_state(
                states.pressure_bar[ti, w.i, w.j],
                states.saturation[ti, w.i, w.j],
                w,
                model.perm_md[w.i, w.j],
                model.grid,
                fluids,
            )
    return WellRates(
        times_days=np.asarray(states.times_days, dtype=np.float64),
        well_ids=[w.id for w in wells],
        q_o=q_o,
        q_w=q_w,
    )


# ---------------------------------------------------------------------------
# RSTF state files and rate CSVs
# ---------------------------------------------------------------------------

RSTF_MAGIC = b"RSTF1"


def write_rstf(path, states):
    n_t, nx, ny = states.pressure_bar.shape
    if states.saturation.shape != (n_t, nx, ny):
        raise ValueError("pressure/saturation shape mismatch")
    with open(path, "wb") as f:
        f.write(RSTF_MAGIC)
        f.write(struct.pack("<3I", nx, ny, n_t))
        f.write(np.ascontiguousarray(states.pressure_bar, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(states.saturation, dtype="<f8").tobytes())


def read_rstf(path, times_days=None):
    with open(path, "rb") as f:
        if f.read(5) != RSTF_MAGIC:
            raise ValueError(f"not an RSTF file: {path}")
        nx, ny, n_t = struct.unpack("<3I", f.read(12))
        n = n_t * nx * ny
        pressure = np.frombuffer(f.read(8 * n), dtype="<f8").copy().reshape(n_t, nx, ny)
        saturation = np.frombuffer(f.read(8 * n), dtype="<f8").copy().reshape(n_t, nx, ny)
        if f.read(1):
            raise ValueError("trailing bytes in RSTF file")
    if times_days is not None and len(times_days) != n_t:
        raise ValueError("times length does not match RSTF step count")
    times = np.asarray(times_days, dtype=np.float64) if times_days is not None else None
    return StateSequence(times_days=times, pressure_bar=pressure, saturation=saturation)


RATES_CSV_HEADER = ["time_days", "well_id", "qo_m3d", "qw_m3d"]


def rates_to_csv(rates):
    buf = StringIO()
    buf.write(",".join(RATES_CSV_HEADER) + "\n")
    for ti, t in enumerate(rates.times_days):
        for wi_, wid in enumerate(rates.well_ids):
            buf.write(
                f"{float(t)!r},{wid},{float(rates.q_o[ti, wi_])!r},{float(rates.q_w[ti, wi_])!r}\n"
            )
    return buf.getvalue()


def write_rates_csv(path, rates):
    with open(path, "w") as f:
        f.write(rates_to_csv(rates))


def read_rates_csv(path):
    import csv as _csv

    with open(path) as f:
        rows = list(_csv.reader(f))
    if not rows or rows[0] != RATES_CSV_HEADER:
        raise ValueError(f"bad rates CSV header in {path}")
    times, ids = [], []
    for row in rows[1:]:
        if not row:
            continue
        t, wid = float(row[0]), row[1]
        if not times or t != times[-1]:
            times.append(t)
        if wid not in ids:
            ids.append(wid)
    n_t, n_w = len(times), len(ids)
    q_o = np.zeros((n_t, n_w))
    q_w = np.zeros((n_t, n_w))
    for row in rows[1:]:
        if not row:
            continue
        ti = times.index(float(row[0]))
        wi_ = ids.index(row[1])
        q_o[ti, wi_] = float(row[2])
        q_w[ti, wi_] = float(row[3])
    return WellRates(times_days=np.array(times), well_ids=ids, q_o=q_o, q_w=q_w)

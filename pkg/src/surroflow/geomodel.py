"""Channelized facies realizations, PCA parameterization, permeability.

Maps are (nx, ny) arrays indexed [i, j]; flat block index b = i*ny + j
(C order).  Facies are binary: 1 = sand/channel, 0 = mud.  Permeability
follows k_i = a*exp(b*m_i), so the default a=30 md, b=ln(2000/30) gives
30 md mud and 2000 md sand.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from io import StringIO

import numpy as np

WELL_KINDS = ("injector", "producer")


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid must have at least one block per axis")
        if self.dx <= 0 or self.dy <= 0 or self.dz <= 0:
            raise ValueError("block dimensions must be positive")

    @property
    def n_b(self):
        return self.nx * self.ny


@dataclass(frozen=True)
class WellSpec:
    id: str
    i: int
    j: int
    kind: str
    bhp_bar: float
    facies: int
    rw_m: float = 0.1

    def __post_init__(self):
        if self.kind not in WELL_KINDS:
            raise ValueError(f"well kind must be one of {WELL_KINDS}, got {self.kind!r}")
        if self.bhp_bar <= 0:
            raise ValueError("BHP must be positive")
        if self.facies not in (0, 1):
            raise ValueError("well facies hard data must be 0 or 1")
        if self.rw_m <= 0:
            raise ValueError("well radius must be positive")


def validate_wells(wells, grid):
    seen = set()
    for w in wells:
        if not (0 <= w.i < grid.nx and 0 <= w.j < grid.ny):
            raise ValueError(f"well {w.id} block ({w.i}, {w.j}) outside grid")
        if (w.i, w.j) in seen:
            raise ValueError(f"two wells share block ({w.i}, {w.j})")
        seen.add((w.i, w.j))
    ids = [w.id for w in wells]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate well ids")


@dataclass
class GeoModel:
    grid: GridSpec
    facies: np.ndarray  # (nx, ny) ints in {0, 1}
    perm_md: np.ndarray  # (nx, ny)
    a_md: float
    b: float


@dataclass(frozen=True)
class ChannelParams:
    n_channels_min: int = 2
    n_channels_max: int = 4
    amplitude_min: float = 1.0
    amplitude_max: float = 4.0
    period_min: float = 8.0
    period_max: float = 48.0
    width_min: int = 2
    width_max: int = 3

    def __post_init__(self):
        if self.n_channels_min < 0 or self.n_channels_max < self.n_channels_min:
            raise ValueError("bad channel count range")
        if self.amplitude_min < 0 or self.period_min <= 0 or self.width_min < 1:
            raise ValueError("channel geometry parameters must be positive")


DEFAULT_A_MD = 30.0
DEFAULT_B = float(np.log(2000.0 / 30.0))


def facies_to_perm(facies, a_md=DEFAULT_A_MD, b=DEFAULT_B):
    """k_i = a*exp(b*m_i), in millidarcy."""
    if a_md <= 0:
        raise ValueError("permeability prefactor a must be positive")
    return a_md * np.exp(b * np.asarray(facies, dtype=np.float64))


def _condition_to_wells(facies, wells, grid):
    """Force hard data at well blocks; patch isolated flips by one ring.

    A radius-1 patch is applied when no 8-neighbor of the well block shares
    the forced facies (a lone block of either type looks like noise rather
    than geology).  A patch may not overwrite the block of an
    already-conditioned well with the wrong facies.
    """
    done = []
    for w in wells:
        target = int(w.facies)
        neighborhood = facies[
            max(0, w.i - 1) : min(grid.nx, w.i + 2), max(0, w.j - 1) : min(grid.ny, w.j + 2)
        ]
        needs_patch = not np.any(neighborhood == target)
        facies[w.i, w.j] = target
        if needs_patch:
            for prev in done:
                if abs(prev.i - w.i) <= 1 and abs(prev.j - w.j) <= 1 and int(prev.facies) != target:
                    raise ValueError(
                        f"unconditionable realization: patch at well {w.id} would overwrite well {prev.id}"
                    )
            facies[
                max(0, w.i - 1) : min(grid.nx, w.i + 2), max(0, w.j - 1) : min(grid.ny, w.j + 2)
            ] = target
        done.append(w)
    # patches can stomp earlier single-block fixes; verify the final map
    for w in wells:
        if facies[w.i, w.j] != int(w.facies):
            raise ValueError(f"unconditionable realization: well {w.id} lost its hard data")
    return facies


def generate_channel_realization(grid, wells, seed, params=ChannelParams(), a_md=DEFAULT_A_MD, b=DEFAULT_B):
    """Binary map of sinusoidal left-to-right sand channels, well-conditioned."""
    if grid.nx < 4 or grid.ny < 4:
        raise ValueError("channel generation needs at least a 4x4 grid")
    validate_wells(wells, grid)
    rng = np.random.default_rng(seed)
    facies = np.zeros((grid.nx, grid.ny), dtype=np.int64)
    n_channels = int(rng.integers(params.n_channels_min, params.n_channels_max + 1))
    x = np.arange(grid.nx)
    for _ in range(n_channels):
        y0 = rng.uniform(0, grid.ny)
        amp = rng.uniform(params.amplitude_min, params.amplitude_max)
        period = rng.uniform(params.period_min, params.period_max)
        phase = rng.uniform(0, 2 * np.pi)
        width = int(rng.integers(params.width_min, params.width_max + 1))
        yc = y0 + amp * np.sin(2 * np.pi * x / period + phase)
        j = np.arange(grid.ny)
        hit = np.abs(j[None, :] - yc[:, None]) <= width / 2.0
        facies[hit] = 1
    facies = _condition_to_wells(facies, wells, grid)
    return GeoModel(grid=grid, facies=facies, perm_md=facies_to_perm(facies, a_md, b), a_md=a_md, b=b)


@dataclass
class PcaBasis:
    grid: GridSpec
    mean_map: np.ndarray  # (n_b,)
    components: np.ndarray  # (n_xi, n_b), orthonormal rows
    singular_values: np.ndarray  # (n_xi,), descending
    n_train: int
    a_md: float
    b: float

    @property
    def n_xi(self):
        return self.components.shape[0]


def fit_pca(realizations, n_xi):
    """Top-n_xi PCA of facies maps; scores scale so xi ~ N(0,I) fits the data."""
    if not realizations:
        raise ValueError("no realizations")
    grid = realizations[0].grid
    for r in realizations[1:]:
        if r.grid != grid:
            raise ValueError("realizations must share one grid")
    n = len(realizations)
    if n_xi >= n:
        raise ValueError(f"n_xi = {n_xi} must be below the sample count {n}")
    x = np.stack([r.facies.ravel().astype(np.float64) for r in realizations])
    mean_map = x.mean(axis=0)
    centered = x - mean_map
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:n_xi].copy()
    # fix the sign convention so serialized bases are reproducible
    for k in range(n_xi):
        pivot = np.argmax(np.abs(components[k]))
        if components[k, pivot] < 0:
            components[k] = -components[k]
    return PcaBasis(
        grid=grid,
        mean_map=mean_map,
        components=components,
        singular_values=s[:n_xi].copy(),
        n_train=n,
        a_md=realizations[0].a_md,
        b=realizations[0].b,
    )


def continuous_map(basis, xi):
    """PCA reconstruction before thresholding, shaped (nx, ny)."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (basis.n_xi,):
        raise ValueError(f"xi must have length {basis.n_xi}, got shape {xi.shape}")
    scale = basis.singular_values / np.sqrt(max(basis.n_train - 1, 1))
    flat = basis.mean_map + (xi * scale) @ basis.components
    return flat.reshape(basis.grid.nx, basis.grid.ny)


def sample_model(basis, xi, wells):
    """Latent vector -> binary GeoModel: threshold at 0.5 (ties to sand), then hard data."""
    validate_wells(wells, basis.grid)
    cont = continuous_map(basis, xi)
    facies = (cont >= 0.5).astype(np.int64)
    for w in wells:
        facies[w.i, w.j] = int(w.facies)
    return GeoModel(
        grid=basis.grid,
        facies=facies,
        perm_md=facies_to_perm(facies, basis.a_md, basis.b),
        a_md=basis.a_md,
        b=basis.b,
    )


# ---------------------------------------------------------------------------
# GEOM v1 files: ASCII header + row-major facies values
# ---------------------------------------------------------------------------

def write_geom(path, model):
    lines = [
        f"GEOM v1 {model.grid.nx} {model.grid.ny} {model.grid.dx!r} {model.grid.dy!r} "
        f"{model.grid.dz!r} {model.a_md!r} {model.b!r}"
    ]
    for row in model.facies:
        lines.append(" ".join(str(int(v)) for v in row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_geom(path):
    with open(path) as f:
        tokens = f.read().split()
    if tokens[:2] != ["GEOM", "v1"]:
        raise ValueError(f"not a GEOM v1 file: {path}")
    nx, ny = int(tokens[2]), int(tokens[3])
    dx, dy, dz, a_md, b = (float(t) for t in tokens[4:9])
    values = tokens[9:]
    if len(values) != nx * ny:
        raise ValueError(f"GEOM file has {len(values)} facies values, expected {nx * ny}")
    facies = np.array([int(v) for v in values], dtype=np.int64).reshape(nx, ny)
    if not np.isin(facies, (0, 1)).all():
        raise ValueError("GEOM facies values must be 0 or 1")
    grid = GridSpec(nx=nx, ny=ny, dx=dx, dy=dy, dz=dz)
    return GeoModel(grid=grid, facies=facies, perm_md=facies_to_perm(facies, a_md, b), a_md=a_md, b=b)


# ---------------------------------------------------------------------------
# well list CSV
# ---------------------------------------------------------------------------

WELL_CSV_HEADER = ["id", "i", "j", "kind", "bhp_bar", "facies", "rw_m"]


def wells_to_csv(wells):
    buf = StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(WELL_CSV_HEADER)
    for w in wells:
        writer.writerow([w.id, w.i, w.j, w.kind, repr(w.bhp_bar), w.facies, repr(w.rw_m)])
    return buf.getvalue()


def write_wells_csv(path, wells):
    with open(path, "w") as f:
        f.write(wells_to_csv(wells))


def read_wells_csv(path):
    with open(path) as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != WELL_CSV_HEADER:
        raise ValueError(f"bad well CSV header in {path}")
    wells = []
    for row in rows[1:]:
        if not row:
            continue
        wells.append(
            WellSpec(
                id=row[0], i=int(row[1]), j=int(row[2]), kind=row[3],
                bhp_bar=float(row[4]), facies=int(row[5]), rw_m=float(row[6]),
            )
        )
    return wells


# ---------------------------------------------------------------------------
# PCAB basis file: binary, little-endian, deterministic bytes
# ---------------------------------------------------------------------------

PCAB_MAGIC = b"PCAB1"


def write_pca_basis(path, basis):
    g = basis.grid
    with open(path, "wb") as f:
        f.write(PCAB_MAGIC)
        f.write(struct.pack("<3I", g.nx, g.ny, basis.n_xi))
        f.write(struct.pack("<I", basis.n_train))
        f.write(struct.pack("<5d", g.dx, g.dy, g.dz, basis.a_md, basis.b))
        f.write(basis.mean_map.astype("<f8").tobytes())
        f.write(basis.singular_values.astype("<f8").tobytes())
        f.write(basis.components.astype("<f8").tobytes())


def read_pca_basis(path):
    with open(path, "rb") as f:
        if f.read(5) != PCAB_MAGIC:
            raise ValueError(f"not a PCAB file: {path}")
        nx, ny, n_xi = struct.unpack("<3I", f.read(12))
        (n_train,) = struct.unpack("<I", f.read(4))
        dx, dy, dz, a_md, b = struct.unpack("<5d", f.read(40))
        n_b = nx * ny
        mean_map = np.frombuffer(f.read(8 * n_b), dtype="<f8").copy()
        singular_values = np.frombuffer(f.read(8 * n_xi), dtype="<f8").copy()
        components = np.frombuffer(f.read(8 * n_xi * n_b), dtype="<f8").copy().reshape(n_xi, n_b)
        if f.read(1):
            raise ValueError("trailing bytes in PCAB file")
    return PcaBasis(
        grid=GridSpec(nx=nx, ny=ny, dx=dx, dy=dy, dz=dz),
        mean_map=mean_map,
        components=components,
        singular_values=singular_values,
        n_train=n_train,
        a_md=a_md,
        b=b,
    )

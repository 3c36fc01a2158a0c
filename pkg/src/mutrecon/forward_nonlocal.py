"""Nonlocal invasion model: sector-quadrature adhesion flux and
predictor-corrector marching.

Directed cell movement comes from cell-cell and cell-matrix adhesion
integrated over a sensing disc, evaluated by decomposing the disc into
annulus sectors (annulus k carries 2^(h+k-1) uniformly spaced radial
sectors) and sampling each density at the exact polar centroid of every
sector via bilinear interpolation; sample points falling outside the tissue
square contribute nothing.  Transport (diffusion minus adhesion advection)
is discretised in conservative flux form with midpoint face values; faces on
the tissue boundary carry no flux.  Time marching is an explicit Euler
predictor followed by a trapezoidal corrector.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import Field, Grid, NumericalError, State, assert_finite, field_csv_name, write_field_csv
from .kinetics import KineticParams, ProliferationRule, ecm_rate, omega, proliferation
from .forward_local import SolveStats, _dump_snapshot, initial_state  # noqa: F401 (shared IC)
from .mutation_space import MutationLaw

# Tolerance (index units) for deciding that a sample point sits on the grid.
_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class AdhesionParams:
    """Adhesion strengths and sensing-disc radius.

    ``s_cc[p, q]`` couples population p to population q; ``s_cv`` is the
    diagonal of the cell-matrix coupling.  Only the uniform sensing kernel
    is implemented.
    """

    s_cc: np.ndarray = field(default_factory=lambda: np.array([[0.5, 0.0], [0.0, 0.3]]))
    s_cv: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.5]))
    radius: float = 0.1
    kernel: str = "uniform"

    def __post_init__(self):
        object.__setattr__(self, "s_cc", np.asarray(self.s_cc, dtype=float))
        object.__setattr__(self, "s_cv", np.asarray(self.s_cv, dtype=float))
        if self.s_cc.shape != (2, 2):
            raise ValueError("s_cc must be a 2x2 matrix")
        if self.s_cv.shape == (2, 2):
            if np.any(self.s_cv != np.diag(np.diag(self.s_cv))):
                raise ValueError("s_cv must be diagonal")
            object.__setattr__(self, "s_cv", np.diag(self.s_cv).copy())
        elif self.s_cv.shape != (2,):
            raise ValueError("s_cv must be a diagonal 2x2 matrix or its diagonal")
        if (self.s_cc < 0).any() or (self.s_cv < 0).any():
            raise ValueError("adhesion strengths must be nonnegative")
        if self.radius <= 0:
            raise ValueError("sensing radius must be positive")
        if self.kernel != "uniform":
            raise ValueError(f"unsupported sensing kernel {self.kernel!r}")


@dataclass(frozen=True)
class SectorGeometry:
    """Annulus-sector decomposition of the sensing disc.

    Per sector: area, exact polar centroid offset from the disc centre, unit
    radial vector at the centroid, and kernel weight.
    """

    radius: float
    annuli: int
    base_exponent: int
    areas: np.ndarray
    barycentres: np.ndarray
    units: np.ndarray
    kernel_weights: np.ndarray

    @property
    def n_sectors(self) -> int:
        return self.areas.size


def build_sector_geometry(radius: float, annuli: int, base_exponent: int,
                          kernel: str = "uniform") -> SectorGeometry:
    """Decompose the sensing disc into annulus sectors.

    Annulus k of s spans radii [R(k-1)/s, Rk/s] (the innermost central
    circle of negligible size is folded into the first annulus) and carries
    2^(h+k-1) sectors starting at angle zero.
    """
    if radius <= 0 or annuli < 1 or base_exponent < 0:
        raise ValueError("need radius > 0, annuli >= 1, base_exponent >= 0")
    if kernel != "uniform":
        raise ValueError(f"unsupported sensing kernel {kernel!r}")
    areas, barys = [], []
    for k in range(1, annuli + 1):
        r_in = radius * (k - 1) / annuli
        r_out = radius * k / annuli
        n_sec = 2 ** (base_exponent + k - 1)
        dtheta = 2.0 * np.pi / n_sec
        ring = 0.5 * (r_out**2 - r_in**2) * dtheta
        radial = (r_out**3 - r_in**3) / 3.0
        for m in range(n_sec):
            th0 = m * dtheta
            th1 = th0 + dtheta
            bx = radial * (np.sin(th1) - np.sin(th0)) / ring
            by = -radial * (np.cos(th1) - np.cos(th0)) / ring
            areas.append(ring)
            barys.append((bx, by))
    areas = np.array(areas)
    barys = np.array(barys)
    norms = np.sqrt((barys**2).sum(axis=1))
    units = barys / norms[:, None]
    return SectorGeometry(radius, annuli, base_exponent, areas, barys, units, np.ones_like(areas))


def write_geometry_csv(geom: SectorGeometry, path) -> None:
    """Per-sector audit table (area, centroid, unit radial vector, weight)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sector", "area", "bary_x", "bary_y", "unit_x", "unit_y", "kernel_weight"])
        for idx in range(geom.n_sectors):
            writer.writerow(
                [idx]
                + [f"{val:.15g}" for val in (
                    geom.areas[idx], *geom.barycentres[idx], *geom.units[idx], geom.kernel_weights[idx],
                )]
            )


def _axis_parts(offset_units: float, n: int):
    """Bilinear sampling stencil along one axis for a constant offset.

    Returns (parts, lo, hi): grid-index shifts with weights, and the inclusive
    range of centre indices whose sample point stays on the grid.
    """
    lo = int(math.ceil(-offset_units - _EDGE_TOL))
    hi = int(math.floor(n - 1 - offset_units + _EDGE_TOL))
    base = int(math.floor(offset_units))
    w = offset_units - base
    if w < _EDGE_TOL:
        parts = ((base, 1.0),)
    elif w > 1.0 - _EDGE_TOL:
        parts = ((base + 1, 1.0),)
    else:
        parts = ((base, 1.0 - w), (base + 1, w))
    # Guard the window so every used slice stays in range.
    for shift, _ in parts:
        lo = max(lo, -shift)
        hi = min(hi, n - 1 - shift)
    return parts, lo, hi


def _sample_plan(geom: SectorGeometry, grid: Grid):
    """Per-sector sampling stencils in grid-index units."""
    plan = []
    for idx in range(geom.n_sectors):
        bx, by = geom.barycentres[idx]
        px, lox, hix = _axis_parts(bx / grid.spacing, grid.n)
        py, loy, hiy = _axis_parts(by / grid.spacing, grid.n)
        plan.append((px, lox, hix, py, loy, hiy))
    return plan


def _sample_at(values: Field, parts_x, parts_y, i: int, j: int) -> float:
    out = 0.0
    for ox, wx in parts_x:
        for oy, wy in parts_y:
            out += wx * wy * values[i + ox, j + oy]
    return out


def _sector_samples(state: State, centre: tuple[int, int], geom: SectorGeometry):
    """Centroid samples of (c1, c2, v) per sector plus the inside-square mask."""
    grid = state.grid
    i, j = centre
    plan = _sample_plan(geom, grid)
    samples = np.zeros((geom.n_sectors, 3))
    inside = np.zeros(geom.n_sectors, dtype=bool)
    for idx, (px, lox, hix, py, loy, hiy) in enumerate(plan):
        if not (lox <= i <= hix and loy <= j <= hiy):
            continue
        inside[idx] = True
        samples[idx, 0] = _sample_at(state.c1, px, py, i, j)
        samples[idx, 1] = _sample_at(state.c2, px, py, i, j)
        samples[idx, 2] = _sample_at(state.v, px, py, i, j)
    return samples, inside


def sector_averages(state: State, centre: tuple[int, int], geom: SectorGeometry) -> np.ndarray:
    """Densities (c1, c2, v) attributed to each sector around one grid node.

    Each sector's average is the bilinear sample at its centroid; sectors
    whose centroid leaves the tissue square report zero.
    """
    samples, _ = _sector_samples(state, centre, geom)
    return samples


def _g_values(sc1, sc2, sv, adh: AdhesionParams, k_c: float):
    """Adhesion magnitudes for both populations with the crowding factor."""
    crowd = np.maximum(k_c - sc1 - sc2 - sv, 0.0)
    g1 = (adh.s_cc[0, 0] * sc1 + adh.s_cc[0, 1] * sc2 + adh.s_cv[0] * sv) * crowd
    g2 = (adh.s_cc[1, 0] * sc1 + adh.s_cc[1, 1] * sc2 + adh.s_cv[1] * sv) * crowd
    return g1, g2


def adhesion_flux(state: State, centre: tuple[int, int], t: float, geom: SectorGeometry,
                  adh: AdhesionParams, population: int, k_c: float = 1.0) -> np.ndarray:
    """Adhesion velocity vector of one population at one grid node."""
    if population not in (1, 2):
        raise ValueError("population must be 1 or 2")
    samples, inside = _sector_samples(state, centre, geom)
    g1, g2 = _g_values(samples[:, 0], samples[:, 1], samples[:, 2], adh, k_c)
    g = g1 if population == 1 else g2
    scale = geom.areas / geom.radius * geom.kernel_weights * inside
    return (geom.units * (scale * g)[:, None]).sum(axis=0)


def adhesion_flux_fields(state: State, geom: SectorGeometry, adh: AdhesionParams, k_c: float):
    """Adhesion velocity components of both populations at every node.

    Returns (a1x, a1y, a2x, a2y).  Vectorised over centres: for a fixed
    sector the centroid sample is a fixed-offset bilinear combination of
    shifted field slices, accumulated over the window of centres whose
    sample point stays inside the square.
    """
    grid = state.grid
    n = grid.n
    a1x = np.zeros((n, n))
    a1y = np.zeros((n, n))
    a2x = np.zeros((n, n))
    a2y = np.zeros((n, n))
    plan = _sample_plan(geom, grid)
    for idx, (px, lox, hix, py, loy, hiy) in enumerate(plan):
        if lox > hix or loy > hiy:
            continue
        win = (slice(lox, hix + 1), slice(loy, hiy + 1))
        shape = (hix - lox + 1, hiy - loy + 1)
        sc1 = np.zeros(shape)
        sc2 = np.zeros(shape)
        sv = np.zeros(shape)
        for ox, wx in px:
            for oy, wy in py:
                wgt = wx * wy
                src = (slice(lox + ox, hix + 1 + ox), slice(loy + oy, hiy + 1 + oy))
                sc1 += wgt * state.c1[src]
                sc2 += wgt * state.c2[src]
                sv += wgt * state.v[src]
        g1, g2 = _g_values(sc1, sc2, sv, adh, k_c)
        f = geom.areas[idx] / geom.radius * geom.kernel_weights[idx]
        ux, uy = geom.units[idx]
        a1x[win] += f * ux * g1
        a1y[win] += f * uy * g1
        a2x[win] += f * ux * g2
        a2y[win] += f * uy * g2
    return a1x, a1y, a2x, a2y


@dataclass(frozen=True)
class NonlocalModelParams:
    """Transport, kinetics, adhesion and time discretisation."""

    d1: float = 0.00675
    d2: float = 0.00675
    kinetics: KineticParams = field(default_factory=KineticParams)
    rule_c1: ProliferationRule = ProliferationRule.LOGISTIC
    rule_c2: ProliferationRule = ProliferationRule.LOGISTIC
    dt: float = 1e-3
    t_final: float = 15.0
    adhesion: AdhesionParams = field(default_factory=AdhesionParams)
    annuli: int = 3
    sector_exponent: int = 2

    def __post_init__(self):
        if self.dt < 0.0:
            raise ValueError("dt must be nonnegative")
        if self.t_final < 0.0:
            raise ValueError("t_final must be nonnegative")

    @property
    def n_steps(self) -> int:
        if self.t_final == 0.0:
            return 0
        if self.dt <= 0.0:
            raise ValueError("dt must be positive when t_final > 0")
        n = int(round(self.t_final / self.dt))
        if abs(n * self.dt - self.t_final) > 1e-9 * max(self.t_final, self.dt):
            raise ValueError(f"t_final {self.t_final} is not an integer multiple of dt {self.dt}")
        return max(n, 0)

    def geometry(self) -> SectorGeometry:
        return build_sector_geometry(self.adhesion.radius, self.annuli,
                                     self.sector_exponent, self.adhesion.kernel)

    def with_time(self, dt=None, t_final=None) -> "NonlocalModelParams":
        return replace(self, dt=self.dt if dt is None else dt,
                       t_final=self.t_final if t_final is None else t_final)


def _transport(c: Field, ax: Field, ay: Field, d: float, dx: float) -> Field:
    """Conservative divergence of (diffusive - adhesive) flux.

    Midpoint face values and central face gradients; the faces closing the
    half-cells on the tissue boundary carry no flux, which with the
    trapezoidal node weights conserves total mass exactly.
    """
    div = np.empty_like(c)
    fx = d * (c[1:, :] - c[:-1, :]) / dx - 0.25 * (c[1:, :] + c[:-1, :]) * (ax[1:, :] + ax[:-1, :])
    div[1:-1, :] = (fx[1:, :] - fx[:-1, :]) / dx
    div[0, :] = 2.0 * fx[0, :] / dx
    div[-1, :] = -2.0 * fx[-1, :] / dx
    fy = d * (c[:, 1:] - c[:, :-1]) / dx - 0.25 * (c[:, 1:] + c[:, :-1]) * (ay[:, 1:] + ay[:, :-1])
    div[:, 1:-1] += (fy[:, 1:] - fy[:, :-1]) / dx
    div[:, 0] += 2.0 * fy[:, 0] / dx
    div[:, -1] += -2.0 * fy[:, -1] / dx
    return div


def rhs_nonlocal(state: State, t: float, law, params: NonlocalModelParams,
                 geom: SectorGeometry):
    """Rates of the nonlocal model; also reports the peak adhesion speed."""
    kin = params.kinetics
    dx = state.grid.spacing
    c1, c2, v = state.c1, state.c2, state.v
    a1x, a1y, a2x, a2y = adhesion_flux_fields(state, geom, params.adhesion, kin.k_c)
    total = c1 + c2 + v
    q = omega(t, kin) * law(c1, v)
    r1 = (
        _transport(c1, a1x, a1y, params.d1, dx)
        + proliferation(params.rule_c1, c1, total, kin)
        - q
    )
    r2 = (
        _transport(c2, a2x, a2y, params.d2, dx)
        + proliferation(params.rule_c2, c2, total, kin)
        + q
    )
    r3 = ecm_rate(c1, c2, v, kin)
    speed = max(
        np.abs(a1x).max(), np.abs(a1y).max(), np.abs(a2x).max(), np.abs(a2y).max()
    )
    return r1, r2, r3, float(speed)


def _floor_fields(c1, c2, v):
    clipped = 0.0
    for f in (c1, c2, v):
        neg = f < 0.0
        if neg.any():
            clipped += -float(f[neg].sum())
            f[neg] = 0.0
    return clipped


def step_nonlocal(state: State, t: float, law, params: NonlocalModelParams,
                  geom: SectorGeometry | None = None) -> State:
    """One predictor-corrector step (Euler predictor, trapezoidal corrector)."""
    new_state, _ = _step_nonlocal_diag(state, t, law, params,
                                       geom if geom is not None else params.geometry())
    return new_state


def _step_nonlocal_diag(state, t, law, params, geom, rhs0=None):
    dt = params.dt
    dx = state.grid.spacing
    if rhs0 is None:
        rhs0 = rhs_nonlocal(state, t, law, params, geom)
    r1, r2, r3, speed = rhs0
    if speed * dt / dx > 1.0:
        warnings.warn(
            f"adhesion speed {speed:.3g} breaks the advective CFL bound at t={t:g}",
            RuntimeWarning,
        )
    pc1 = state.c1 + dt * r1
    pc2 = state.c2 + dt * r2
    pv = state.v + dt * r3
    clipped = _floor_fields(pc1, pc2, pv)
    predictor = State(pc1, pc2, pv, t + dt, state.grid)
    s1, s2, s3, _ = rhs_nonlocal(predictor, t + dt, law, params, geom)
    c1 = state.c1 + 0.5 * dt * (r1 + s1)
    c2 = state.c2 + 0.5 * dt * (r2 + s2)
    v = state.v + 0.5 * dt * (r3 + s3)
    clipped += _floor_fields(c1, c2, v)
    new_state = State(c1, c2, v, t + dt, state.grid)
    for name, values in zip(("c1", "c2", "v"), new_state.fields()):
        assert_finite(values, f"{name} at t={t + dt:g}")
    return new_state, clipped


@dataclass
class NonlocalSolveResult:
    state: State
    stats: SolveStats


def simulate_nonlocal(
    law,
    params: NonlocalModelParams,
    grid: Grid,
    initial: State | None = None,
    *,
    geometry: SectorGeometry | None = None,
    track_extremes: bool = False,
    snapshot_every: int = 0,
    snapshot_dir=None,
) -> NonlocalSolveResult:
    """Run the nonlocal model from the initial state to ``t_final``."""
    if initial is None:
        initial = initial_state(grid)
    geom = geometry if geometry is not None else params.geometry()
    state = initial.copy()
    clipped = 0.0
    clamp_before = law.clamp_count if isinstance(law, MutationLaw) else 0
    c1_min = c1_max = v_min = v_max = float("nan")
    if track_extremes:
        c1_min, c1_max = float(state.c1.min()), float(state.c1.max())
        v_min, v_max = float(state.v.min()), float(state.v.max())
    if snapshot_every > 0 and snapshot_dir is not None:
        _dump_snapshot(state, snapshot_dir)
    n_steps = params.n_steps
    for step in range(n_steps):
        t = initial.time + step * params.dt
        try:
            state, clip = _step_nonlocal_diag(state, t, law, params, geom)
        except NumericalError as err:
            raise NumericalError(f"{err} (step {step})") from None
        clipped += clip
        if track_extremes:
            c1_min = min(c1_min, float(state.c1.min()))
            c1_max = max(c1_max, float(state.c1.max()))
            v_min = min(v_min, float(state.v.min()))
            v_max = max(v_max, float(state.v.max()))
        if snapshot_every > 0 and snapshot_dir is not None and (step + 1) % snapshot_every == 0:
            _dump_snapshot(state, snapshot_dir)
    clamp_count = (law.clamp_count - clamp_before) if isinstance(law, MutationLaw) else 0
    stats = SolveStats(c1_min, c1_max, v_min, v_max, clipped * grid.spacing**2, clamp_count)
    return NonlocalSolveResult(state, stats)


def forward_operator_nonlocal(law, params: NonlocalModelParams, grid: Grid,
                              initial: State | None = None) -> State:
    """Final-time densities of the nonlocal model for a candidate law."""
    return simulate_nonlocal(law, params, grid, initial).state

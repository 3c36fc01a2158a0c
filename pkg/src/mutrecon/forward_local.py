"""Local invasion model: method-of-lines rates and explicit Euler marching.

Both cell populations diffuse, move haptotactically up matrix gradients, and
proliferate; the primary population loses density to the secondary one
through the (pluggable) mutation law gated by the smooth time switch.  The
matrix is degraded by cells and remodels toward free capacity.

Two engines produce identical trajectories: a vectorised numpy reference
(``rhs_local`` / ``step_euler``), which accepts any Python callable as the
mutation law, and the compiled kernels in ``_kernels`` used for structured
``MutationLaw`` objects, where speed matters (reconstruction runs thousands
of forward solves).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .grid import (
    Field,
    Grid,
    NumericalError,
    State,
    assert_finite,
    field_csv_name,
    haptotaxis_divergence_field,
    laplacian_field,
    write_field_csv,
)
from .kinetics import KineticParams, ProliferationRule, ecm_rate, omega, proliferation
from .mutation_space import MutationLaw

# Gaussian bump shape of the initial primary tumour.
IC_BUMP_WIDTH = 0.03
IC_BUMP_OFFSET_EXP = 9.407
# Matrix initial profile 0.5 + 0.3 sin(4 pi |x|).
IC_ECM_BASE = 0.5
IC_ECM_AMP = 0.3
IC_ECM_FREQ = 4.0 * np.pi


class StabilityError(ValueError):
    """Explicit-stability guard violated."""


@dataclass(frozen=True)
class LocalModelParams:
    """Transport coefficients, kinetics and time discretisation."""

    d1: float = 0.00675
    d2: float = 0.00675
    eta1: float = 2.85e-2
    eta2: float = 2.85e-2
    kinetics: KineticParams = field(default_factory=KineticParams)
    rule_c1: ProliferationRule = ProliferationRule.LOGISTIC
    rule_c2: ProliferationRule = ProliferationRule.LOGISTIC
    dt: float = 1e-3
    t_final: float = 15.0

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
        steps = self.t_final / self.dt
        n = int(round(steps))
        if abs(n * self.dt - self.t_final) > 1e-9 * max(self.t_final, self.dt):
            raise ValueError(f"t_final {self.t_final} is not an integer multiple of dt {self.dt}")
        return max(n, 0)

    def with_time(self, dt=None, t_final=None) -> "LocalModelParams":
        return replace(self, dt=self.dt if dt is None else dt,
                       t_final=self.t_final if t_final is None else t_final)


def diffusion_cfl(params, grid: Grid) -> float:
    """Explicit diffusion stability number 4*max(D)*dt/dx^2."""
    return 4.0 * max(params.d1, params.d2) * params.dt / grid.spacing**2


def check_stability(params, grid: Grid) -> None:
    ratio = diffusion_cfl(params, grid)
    if ratio > 1.0 + 1e-12:
        raise StabilityError(f"diffusion stability number {ratio:.3g} exceeds 1")
    if ratio > 0.5:
        warnings.warn(f"diffusion stability number {ratio:.3g} above 0.5", RuntimeWarning)


def initial_state(grid: Grid) -> State:
    """Closed-form initial densities: an offset Gaussian tumour bump centred
    in the tissue square, no mutated cells, and a radially rippled matrix."""
    x, y = grid.mesh()
    cx = grid.origin[0] + 0.5 * grid.side
    cy = grid.origin[1] + 0.5 * grid.side
    r2_centre = (x - cx) ** 2 + (y - cy) ** 2
    c1 = 0.5 * (np.exp(-r2_centre / IC_BUMP_WIDTH) - np.exp(-IC_BUMP_OFFSET_EXP))
    np.maximum(c1, 0.0, out=c1)
    c2 = np.zeros_like(c1)
    r = np.sqrt(x**2 + y**2)
    v = IC_ECM_BASE + IC_ECM_AMP * np.sin(IC_ECM_FREQ * r)
    return State(c1, c2, v, 0.0, grid)


def rhs_local(state: State, t: float, law, params: LocalModelParams):
    """Method-of-lines rates (dc1/dt, dc2/dt, dv/dt) of the local model.

    ``law`` is any callable mapping (c1, v) field arrays to the mutation flux
    density; its contribution enters the two cell rates with opposite signs.
    """
    kin = params.kinetics
    dx = state.grid.spacing
    c1, c2, v = state.c1, state.c2, state.v
    total = c1 + c2 + v
    q = omega(t, kin) * law(c1, v)

    r1 = (
        params.d1 * laplacian_field(c1, dx)
        - haptotaxis_divergence_field(c1, v, dx, params.eta1)
        + proliferation(params.rule_c1, c1, total, kin)
        - q
    )
    r2 = (
        params.d2 * laplacian_field(c2, dx)
        - haptotaxis_divergence_field(c2, v, dx, params.eta2)
        + proliferation(params.rule_c2, c2, total, kin)
        + q
    )
    r3 = ecm_rate(c1, c2, v, kin)
    assert_finite(r1, f"c1 rate at t={t:g}")
    assert_finite(r2, f"c2 rate at t={t:g}")
    assert_finite(r3, f"v rate at t={t:g}")
    return r1, r2, r3


def step_euler(state: State, t: float, law, params: LocalModelParams) -> State:
    """One explicit Euler step with the negative-density floor."""
    new_state, _ = _step_euler_diag(state, t, law, params)
    return new_state


def _step_euler_diag(state, t, law, params):
    r1, r2, r3 = rhs_local(state, t, law, params)
    dt = params.dt
    c1 = state.c1 + dt * r1
    c2 = state.c2 + dt * r2
    v = state.v + dt * r3
    clipped = 0.0
    for f in (c1, c2, v):
        neg = f < 0.0
        if neg.any():
            clipped += -float(f[neg].sum())
            f[neg] = 0.0
    return State(c1, c2, v, t + dt, state.grid), clipped


@dataclass
class SolveStats:
    """Diagnostics accumulated over a forward solve."""

    c1_min: float
    c1_max: float
    v_min: float
    v_max: float
    clipped_mass: float
    law_clamp_count: int

    @property
    def region(self):
        from .mutation_space import AccessibleRegion

        return AccessibleRegion(self.c1_min, self.c1_max, self.v_min, self.v_max)


@dataclass
class LocalSolveResult:
    state: State
    stats: SolveStats
    touched: np.ndarray | None = None


def _kernel_law_args(law: MutationLaw):
    coeffs = law.coeffs if law.coeffs is not None else np.zeros(1)
    return law.kind, np.ascontiguousarray(coeffs, dtype=float), law.table_m, law.delta_0, law.kappa, law.k_max


def simulate_local(
    law,
    params: LocalModelParams,
    grid: Grid,
    initial: State | None = None,
    *,
    track_extremes: bool = False,
    collect_touched: bool = False,
    engine: str = "auto",
    snapshot_every: int = 0,
    snapshot_dir=None,
) -> LocalSolveResult:
    """Run the local model from the initial state to ``t_final``.

    ``engine='auto'`` uses the compiled kernels for structured laws and the
    numpy reference for arbitrary callables.  ``collect_touched`` additionally
    reports which trial-space nodes were ever bracketed by an evaluation (a
    zero entry means perturbing that coefficient provably cannot change the
    trajectory).
    """
    if initial is None:
        initial = initial_state(grid)
    check_stability(params, grid)
    n_steps = params.n_steps
    if engine == "auto":
        engine = "kernel" if isinstance(law, MutationLaw) else "numpy"
    if engine == "kernel" and not isinstance(law, MutationLaw):
        raise TypeError("compiled engine needs a structured MutationLaw")

    if engine == "kernel":
        return _simulate_kernel(
            law, params, grid, initial, n_steps,
            track_extremes=track_extremes, collect_touched=collect_touched,
            snapshot_every=snapshot_every, snapshot_dir=snapshot_dir,
        )
    return _simulate_numpy(
        law, params, grid, initial, n_steps,
        track_extremes=track_extremes,
        snapshot_every=snapshot_every, snapshot_dir=snapshot_dir,
    )


def _dump_snapshot(state, snapshot_dir):
    for name, values in zip(("c1", "c2", "v"), state.fields()):
        write_field_csv(values, snapshot_dir / field_csv_name(name, state.time))


def _init_stats(initial):
    stats = np.zeros(_kernels.STATS_LEN)
    stats[_kernels.STAT_C1MIN] = initial.c1.min()
    stats[_kernels.STAT_C1MAX] = initial.c1.max()
    stats[_kernels.STAT_VMIN] = initial.v.min()
    stats[_kernels.STAT_VMAX] = initial.v.max()
    stats[_kernels.STAT_BAD_STEP] = -1.0
    return stats


def _simulate_kernel(law, params, grid, initial, n_steps, *, track_extremes,
                     collect_touched, snapshot_every, snapshot_dir):
    c1 = np.ascontiguousarray(initial.c1, dtype=float).copy()
    c2 = np.ascontiguousarray(initial.c2, dtype=float).copy()
    v = np.ascontiguousarray(initial.v, dtype=float).copy()
    kind, coeffs, law_m, delta0, kappa, law_k_max = _kernel_law_args(law)
    touched = np.zeros(coeffs.size if collect_touched else 1, dtype=np.uint8)
    stats = _init_stats(initial)
    kin = params.kinetics

    def run_chunk(t0, steps):
        _kernels.run_local(
            c1, c2, v, t0, steps, params.dt, grid.spacing,
            params.d1, params.d2, params.eta1, params.eta2,
            kin.mu_c, kin.k_c, kin.rho, kin.mu_v, kin.t_switch, kin.t_steepness,
            int(params.rule_c1), int(params.rule_c2),
            kind, coeffs, law_m, delta0, kappa, law_k_max,
            stats, touched, collect_touched, track_extremes,
        )

    done = 0
    if snapshot_every > 0 and snapshot_dir is not None:
        _dump_snapshot(initial, snapshot_dir)
        while done < n_steps:
            chunk = min(snapshot_every, n_steps - done)
            run_chunk(initial.time + done * params.dt, chunk)
            done += chunk
            if stats[_kernels.STAT_BAD_STEP] >= 0:
                break
            _dump_snapshot(State(c1, c2, v, initial.time + done * params.dt, grid), snapshot_dir)
    else:
        run_chunk(initial.time, n_steps)
        done = n_steps

    bad = stats[_kernels.STAT_BAD_STEP]
    if bad >= 0:
        raise NumericalError(f"non-finite value produced at step {int(bad) + (done - n_steps)}")
    final = State(c1, c2, v, initial.time + n_steps * params.dt, grid)
    solve_stats = SolveStats(
        stats[_kernels.STAT_C1MIN], stats[_kernels.STAT_C1MAX],
        stats[_kernels.STAT_VMIN], stats[_kernels.STAT_VMAX],
        stats[_kernels.STAT_CLIP] * grid.spacing**2,
        int(stats[_kernels.STAT_OOB]),
    )
    return LocalSolveResult(final, solve_stats, touched if collect_touched else None)


def _simulate_numpy(law, params, grid, initial, n_steps, *, track_extremes,
                    snapshot_every, snapshot_dir):
    state = initial.copy()
    clipped = 0.0
    clamp_before = law.clamp_count if isinstance(law, MutationLaw) else 0
    c1_min = c1_max = v_min = v_max = None
    if track_extremes:
        c1_min, c1_max = float(state.c1.min()), float(state.c1.max())
        v_min, v_max = float(state.v.min()), float(state.v.max())
    if snapshot_every > 0 and snapshot_dir is not None:
        _dump_snapshot(state, snapshot_dir)
    for step in range(n_steps):
        t = initial.time + step * params.dt
        try:
            state, clip = _step_euler_diag(state, t, law, params)
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
    if not track_extremes:
        c1_min = c1_max = v_min = v_max = float("nan")
    stats = SolveStats(c1_min, c1_max, v_min, v_max, clipped * grid.spacing**2, clamp_count)
    return LocalSolveResult(state, stats, None)


def forward_operator(law, params: LocalModelParams, grid: Grid,
                     initial: State | None = None) -> State:
    """Final-time densities for a candidate mutation law."""
    return simulate_local(law, params, grid, initial).state


def simulate_local_batch(
    template: MutationLaw,
    coeff_matrix: np.ndarray,
    params: LocalModelParams,
    grid: Grid,
    initial: State | None = None,
) -> np.ndarray:
    """Independent forward solves for many coefficient vectors at once.

    Rows of ``coeff_matrix`` replace the template law's coefficients; all
    runs start from the same initial state.  Returns finals stacked as
    ``(B, 3, N, N)``.  Used for finite-difference Jacobian columns, which are
    embarrassingly parallel.
    """
    if initial is None:
        initial = initial_state(grid)
    check_stability(params, grid)
    coeff_matrix = np.ascontiguousarray(coeff_matrix, dtype=float)
    b = coeff_matrix.shape[0]
    n = grid.n
    c1 = np.broadcast_to(initial.c1, (b, n, n)).copy()
    c2 = np.broadcast_to(initial.c2, (b, n, n)).copy()
    v = np.broadcast_to(initial.v, (b, n, n)).copy()
    stats = np.zeros((b, _kernels.STATS_LEN))
    stats[:, _kernels.STAT_BAD_STEP] = -1.0
    kind, _, law_m, delta0, kappa, law_k_max = _kernel_law_args(template)
    kin = params.kinetics
    _kernels.run_local_batch(
        c1, c2, v, initial.time, params.n_steps, params.dt, grid.spacing,
        params.d1, params.d2, params.eta1, params.eta2,
        kin.mu_c, kin.k_c, kin.rho, kin.mu_v, kin.t_switch, kin.t_steepness,
        int(params.rule_c1), int(params.rule_c2),
        kind, coeff_matrix, law_m, delta0, kappa, law_k_max, stats,
    )
    bad = stats[:, _kernels.STAT_BAD_STEP]
    if (bad >= 0).any():
        row = int(np.argmax(bad >= 0))
        raise NumericalError(f"non-finite value in batch run {row} at step {int(bad[row])}")
    return np.stack([c1, c2, v], axis=1)

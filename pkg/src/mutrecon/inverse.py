"""Reconstruction of mutation laws from final-time density snapshots.

Synthetic measurements are manufactured by running the chosen forward model
with a known ground-truth law and, optionally, adding Gaussian noise whose
per-field standard deviation equals the domain mean of the exact data.  The
unknown law is then sought in a finite-element trial space by minimising the
Tikhonov functional

    J_alpha(m) = ||K(m) - d||^2 + alpha * ||m||^2,

with K the forward operator, d the stacked measurement vector and m the
nodal coefficient vector.  A damped least-squares minimiser with
finite-difference Jacobian handles each alpha; the regularisation parameter
is swept over a descending grid with warm starts, and the reported solution
is picked by the discrepancy principle (noisy data) or by the smallest
misfit (exact data).

Trial-space coefficients whose basis functions are never bracketed by any
evaluation along the current trajectory provably cannot change it, so their
Jacobian columns are exactly zero and are skipped rather than solved for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward_local import LocalModelParams, initial_state, simulate_local, simulate_local_batch
from .forward_nonlocal import NonlocalModelParams, SectorGeometry, simulate_nonlocal
from .grid import Grid
from .kinetics import KineticParams, TrueMutationLaw, ecm_window_factor
from .mutation_space import (
    AccessibleRegion,
    MutationCase,
    MutationLaw,
    MutationSpace1D,
    MutationSpace2D,
    eval_1d,
    eval_2d,
)
from .optimize import LMResult, LMSettings, levenberg_marquardt

DEFAULT_ALPHA_GRID = tuple(10.0 ** -i for i in range(1, 13))
DEFAULT_INITIAL_COEFF = 1e-3
DEFAULT_TAU = 1.1


@dataclass
class Measurement:
    """Final-time density snapshots, possibly noise-corrupted.

    ``sigmas`` records the per-field noise standard deviations used (the
    domain means of the exact data); ``accessible_region`` the (c1, v) range
    visited by the generating run.
    """

    c1_star: np.ndarray
    c2_star: np.ndarray
    v_star: np.ndarray
    noise_level: float
    rng_seed: int
    sigmas: np.ndarray
    accessible_region: AccessibleRegion | None = None

    def data_vector(self) -> np.ndarray:
        return np.concatenate([self.c1_star.ravel(), self.c2_star.ravel(), self.v_star.ravel()])

    def noise_energy(self) -> float:
        """Expected squared norm of the injected noise."""
        n_nodes = self.c1_star.size
        return float(np.sum((self.noise_level * self.sigmas) ** 2) * n_nodes)


def true_law_for_case(case: MutationCase) -> TrueMutationLaw:
    """Ground-truth law generating the measurements of each experiment."""
    case = MutationCase.parse(case)
    if case == MutationCase.I:
        return TrueMutationLaw.LINEAR_IN_C1
    return TrueMutationLaw.ECM_WINDOW


def _run_forward(model, law, params, grid, geometry, *, track_extremes=False,
                 collect_touched=False):
    if model == "local":
        res = simulate_local(law, params, grid, track_extremes=track_extremes,
                             collect_touched=collect_touched)
        return res.state, res.stats, res.touched
    res = simulate_nonlocal(law, params, grid, geometry=geometry,
                            track_extremes=track_extremes)
    return res.state, res.stats, None


def synthesize_measurement(
    case: MutationCase,
    model: str,
    params,
    grid: Grid,
    delta: float,
    seed: int,
    geometry: SectorGeometry | None = None,
) -> Measurement:
    """Exact forward data for the case's true law, plus calibrated noise.

    Noise per field is delta * N(0, sigma) with sigma the grid average of
    that field's exact data; a field that is exactly zero stays noise-free.
    With delta = 0 the exact fields are returned unchanged.
    """
    if delta < 0:
        raise ValueError("noise level must be nonnegative")
    kin = params.kinetics
    law = MutationLaw.true_law(true_law_for_case(case), kin)
    state, stats, _ = _run_forward(model, law, params, grid, geometry, track_extremes=True)
    exact = state.fields()
    sigmas = np.array([float(f.mean()) for f in exact])
    if delta == 0.0:
        noisy = exact
    else:
        rng = np.random.default_rng(seed)
        noisy = tuple(
            f + delta * rng.normal(0.0, s, size=f.shape) if s > 0 else f.copy()
            for f, s in zip(exact, sigmas)
        )
    return Measurement(noisy[0], noisy[1], noisy[2], delta, seed, sigmas, stats.region)


@dataclass
class TikhonovProblem:
    """Everything one reconstruction needs: data, model, trial space, solver."""

    case: MutationCase
    model: str
    measurement: Measurement
    params: LocalModelParams | NonlocalModelParams
    grid: Grid
    geometry: SectorGeometry | None = None
    trial_m: int = 9
    alpha_grid: tuple = DEFAULT_ALPHA_GRID
    initial_coeff: float = DEFAULT_INITIAL_COEFF
    tau: float = DEFAULT_TAU
    settings: LMSettings = field(default_factory=LMSettings)

    def __post_init__(self):
        self.case = MutationCase.parse(self.case)
        if self.model not in ("local", "nonlocal"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.model == "nonlocal" and self.geometry is None:
            self.geometry = self.params.geometry()
        alphas = np.asarray(self.alpha_grid, dtype=float)
        if alphas.size == 0 or (alphas <= 0).any():
            raise ValueError("alpha grid must be nonempty and strictly positive")
        if (np.diff(alphas) >= 0).any():
            raise ValueError("alpha grid must be sorted strictly descending")
        self.alpha_grid = tuple(alphas)
        self._data = self.measurement.data_vector()
        self._cache = {}

    @property
    def n_coeffs(self) -> int:
        return self.trial_m**2 if self.case == MutationCase.III else self.trial_m

    @property
    def k_max(self) -> float:
        return self.params.kinetics.k_c

    def initial_coeffs(self) -> np.ndarray:
        return np.full(self.n_coeffs, self.initial_coeff)

    def trial_law(self, coeffs: np.ndarray) -> MutationLaw:
        return MutationLaw.from_coeffs(self.case, coeffs, self.params.kinetics, self.k_max)

    # -- forward evaluations ------------------------------------------------

    def forward_data(self, coeffs: np.ndarray):
        """Stacked final-time densities K(m) and the touched-node mask.

        Memoised on the coefficient bytes: the minimiser evaluates the
        residual and the Jacobian at the same point.
        """
        key = coeffs.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        law = self.trial_law(coeffs)
        state, _, touched = _run_forward(
            self.model, law, self.params, self.grid, self.geometry,
            collect_touched=(self.model == "local"),
        )
        k_vec = np.concatenate([f.ravel() for f in state.fields()])
        if len(self._cache) > 8:
            self._cache.clear()
        self._cache[key] = (k_vec, touched)
        return k_vec, touched

    def data_misfit(self, coeffs: np.ndarray) -> float:
        k_vec, _ = self.forward_data(coeffs)
        diff = k_vec - self._data
        return float(diff @ diff)

    def residual_vector(self, coeffs: np.ndarray, alpha: float) -> np.ndarray:
        """Stacked residual [K(m) - d; sqrt(alpha) m], so that the squared
        norm equals the Tikhonov objective."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.size != self.n_coeffs:
            raise ValueError(f"expected {self.n_coeffs} coefficients, got {coeffs.size}")
        k_vec, _ = self.forward_data(coeffs)
        return np.concatenate([k_vec - self._data, np.sqrt(alpha) * coeffs])

    def data_jacobian(self, coeffs: np.ndarray, scheme: str = "forward") -> np.ndarray:
        """Finite-difference Jacobian of K(m), one forward solve per column.

        Columns of never-touched coefficients are exactly zero and skipped.
        The local model runs all perturbed solves as one parallel batch.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        base_k, touched = self.forward_data(coeffs)
        if touched is None:
            active = np.arange(coeffs.size)
        else:
            active = np.flatnonzero(touched)
        jac = np.zeros((base_k.size, coeffs.size))
        if active.size == 0:
            return jac
        incs = self.settings.fd_increment * np.maximum(1.0, np.abs(coeffs[active]))

        if scheme == "forward":
            plus = self._batch_eval(coeffs, active, incs)
            for col, l in enumerate(active):
                jac[:, l] = (plus[col] - base_k) / incs[col]
        elif scheme == "central":
            plus = self._batch_eval(coeffs, active, incs)
            minus = self._batch_eval(coeffs, active, -incs)
            for col, l in enumerate(active):
                jac[:, l] = (plus[col] - minus[col]) / (2.0 * incs[col])
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        return jac

    def _batch_eval(self, coeffs, active, steps):
        """K(m + step_l e_l) for each active column, stacked row-wise."""
        mat = np.tile(coeffs, (active.size, 1))
        mat[np.arange(active.size), active] += steps
        if self.model == "local":
            template = self.trial_law(coeffs)
            finals = simulate_local_batch(template, mat, self.params, self.grid)
            return finals.reshape(active.size, -1)
        rows = []
        for row in mat:
            k_vec, _ = self.forward_data(np.ascontiguousarray(row))
            rows.append(k_vec)
        return np.array(rows)


@dataclass
class AlphaRecord:
    """Outcome of one regularisation-parameter value."""

    alpha: float
    coeffs: np.ndarray
    misfit: float
    penalty: float
    iterations: int
    status: str

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "misfit": self.misfit,
            "penalty": self.penalty,
            "iterations": self.iterations,
            "status": self.status,
        }


@dataclass
class ReconstructionResult:
    """Full sweep outcome plus the selected reconstruction."""

    case: MutationCase
    trial_m: int
    k_max: float
    records: list
    selected_alpha: float
    selected_coeffs: np.ndarray
    noise_energy: float
    discrepancy_satisfied: bool | None
    accessible_region: AccessibleRegion | None
    restricted_rel_error: float | None = None

    def selected_record(self) -> AlphaRecord:
        for rec in self.records:
            if rec.alpha == self.selected_alpha:
                return rec
        raise LookupError("selected alpha missing from records")

    def reconstruction_space(self):
        if self.case == MutationCase.III:
            m = self.trial_m
            return MutationSpace2D(self.selected_coeffs.reshape(m, m).copy(), self.k_max)
        return MutationSpace1D(self.selected_coeffs.copy(), self.k_max)


def minimize(problem: TikhonovProblem, alpha: float,
             start: np.ndarray | None = None) -> AlphaRecord:
    """Minimise the Tikhonov functional for one alpha."""
    x0 = problem.initial_coeffs() if start is None else np.asarray(start, dtype=float)

    def residual(m):
        return problem.residual_vector(m, alpha)

    def jacobian(m):
        jac_data = problem.data_jacobian(m, "forward")
        return np.vstack([jac_data, np.sqrt(alpha) * np.eye(m.size)])

    result: LMResult = levenberg_marquardt(residual, jacobian, x0, problem.settings)
    misfit = problem.data_misfit(result.x)
    penalty = float(result.x @ result.x)
    return AlphaRecord(alpha, result.x, misfit, penalty, result.iterations, result.status)


def sweep_and_select(problem: TikhonovProblem, *, progress=None) -> ReconstructionResult:
    """Sweep the alpha grid (descending, warm-started) and pick the answer.

    Noisy data: the largest alpha whose misfit is within tau times the
    estimated noise energy (discrepancy principle); if none qualifies the
    smallest-misfit alpha is reported flagged.  Exact data: the
    smallest-misfit alpha.
    """
    records = []
    start = problem.initial_coeffs()
    for alpha in problem.alpha_grid:
        rec = minimize(problem, alpha, start)
        records.append(rec)
        start = rec.coeffs
        if progress is not None:
            progress(rec)

    noise_energy = problem.measurement.noise_energy()
    misfits = np.array([rec.misfit for rec in records])
    if problem.measurement.noise_level == 0.0:
        chosen = int(np.argmin(misfits))
        satisfied = None
    else:
        bound = problem.tau * noise_energy
        under = np.flatnonzero(misfits <= bound)
        if under.size:
            chosen = int(under[0])  # grid is descending: first hit = largest alpha
            satisfied = True
        else:
            chosen = int(np.argmin(misfits))
            satisfied = False

    result = ReconstructionResult(
        case=problem.case,
        trial_m=problem.trial_m,
        k_max=problem.k_max,
        records=records,
        selected_alpha=records[chosen].alpha,
        selected_coeffs=records[chosen].coeffs,
        noise_energy=noise_energy,
        discrepancy_satisfied=satisfied,
        accessible_region=problem.measurement.accessible_region,
    )
    target = true_restriction_target(problem.case, problem.params.kinetics)
    if result.accessible_region is not None:
        result.restricted_rel_error = restricted_error(result, target, result.accessible_region)
    return result


def true_restriction_target(case: MutationCase, kin: KineticParams):
    """Ground-truth function the reconstruction is compared against.

    Case i: the full 1-D law of the cell density.  Case ii: the matrix
    window factor (the known linear cell part is not reconstructed).
    Case iii: the full 2-D law.
    """
    case = MutationCase.parse(case)
    if case == MutationCase.I:
        return lambda x: kin.delta_0 * np.asarray(x, dtype=float)
    if case == MutationCase.II:
        return lambda x: ecm_window_factor(x, kin.kappa)
    return lambda c, v: kin.delta_0 * np.asarray(c, dtype=float) * ecm_window_factor(v, kin.kappa)


RESTRICTION_SAMPLES = 101


def restricted_error(result: ReconstructionResult, true_law, region: AccessibleRegion) -> float:
    """Relative L2 distance to the true law on the accessible region.

    Sampled on a uniform 101-point lattice (101 x 101 in the 2-D case) over
    the visited range; a degenerate range collapses to a single point.
    """
    space = result.reconstruction_space()
    if result.case == MutationCase.III:
        cs = np.linspace(region.c1_min, region.c1_max, RESTRICTION_SAMPLES)
        vs = np.linspace(region.v_min, region.v_max, RESTRICTION_SAMPLES)
        cc, vv = np.meshgrid(cs, vs, indexing="ij")
        rec = eval_2d(space, cc, vv)
        ref = true_law(cc, vv)
    else:
        lo, hi = (
            (region.c1_min, region.c1_max)
            if result.case == MutationCase.I
            else (region.v_min, region.v_max)
        )
        xs = np.linspace(lo, hi, RESTRICTION_SAMPLES)
        rec = eval_1d(space, xs)
        ref = true_law(xs)
    ref_norm = float(np.linalg.norm(ref))
    diff_norm = float(np.linalg.norm(rec - ref))
    if ref_norm == 0.0:
        return 0.0 if diff_norm == 0.0 else float("inf")
    return diff_norm / ref_norm

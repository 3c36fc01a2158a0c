"""Finite-element trial spaces for candidate mutation laws.

Candidate laws live on uniform nodal grids over the density range
``[0, k_max]``: piecewise-linear in one variable for the cell-driven and
matrix-gated cases, bilinear on the tensor square for the general
two-variable case.  Evaluation clamps out-of-range arguments to the nearest
end node (solver states can transiently overshoot the density bounds) and
counts how often that happened.

Also home to the combined trial law plugged into the forward solvers in
place of the unknown mutation term, and to the accessible-region bookkeeping
(the density ranges actually visited by the dynamics, where reconstructions
are meaningful).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from .grid import State
from .kinetics import KineticParams, TrueMutationLaw, ecm_window_factor


class ConfigurationError(ValueError):
    """A trial law was requested without the space it needs."""


class MutationCase(enum.Enum):
    """Which dependence of the mutation law is being reconstructed."""

    I = "i"  # unknown 1-D law of the primary cell density
    II = "ii"  # known linear cell factor times unknown 1-D law of the matrix
    III = "iii"  # unknown 2-D law of (cells, matrix)

    @classmethod
    def parse(cls, text) -> "MutationCase":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).lower())
        except ValueError:
            raise ConfigurationError(f"unknown mutation case {text!r}") from None


@dataclass
class MutationSpace1D:
    """Piecewise-linear nodal values on an equispaced grid over [0, k_max]."""

    coeffs: np.ndarray
    k_max: float = 1.0
    out_of_range_count: int = field(default=0, compare=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 1 or self.coeffs.size < 2:
            raise ValueError("1-D space needs at least two nodal coefficients")
        if self.k_max <= 0.0:
            raise ValueError("k_max must be positive")

    @property
    def m(self) -> int:
        return self.coeffs.size

    @property
    def step(self) -> float:
        return self.k_max / (self.m - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.k_max, self.m)

    @classmethod
    def constant(cls, value: float, m: int, k_max: float = 1.0) -> "MutationSpace1D":
        return cls(np.full(m, float(value)), k_max)

    @classmethod
    def from_function(cls, fn, m: int, k_max: float = 1.0) -> "MutationSpace1D":
        nodes = np.linspace(0.0, k_max, m)
        return cls(np.asarray(fn(nodes), dtype=float), k_max)


@dataclass
class MutationSpace2D:
    """Bilinear nodal values on the tensor square [0, k_max]^2.

    ``coeffs[l, k]`` holds the value at (cell node l, matrix node k).
    """

    coeffs: np.ndarray
    k_max: float = 1.0
    out_of_range_count: int = field(default=0, compare=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != self.coeffs.shape[1]:
            raise ValueError("2-D space needs a square coefficient matrix")
        if self.coeffs.shape[0] < 2:
            raise ValueError("2-D space needs at least two nodes per axis")
        if self.k_max <= 0.0:
            raise ValueError("k_max must be positive")

    @property
    def m(self) -> int:
        return self.coeffs.shape[0]

    @property
    def step(self) -> float:
        return self.k_max / (self.m - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.k_max, self.m)

    @classmethod
    def constant(cls, value: float, m: int, k_max: float = 1.0) -> "MutationSpace2D":
        return cls(np.full((m, m), float(value)), k_max)

    @classmethod
    def from_function(cls, fn, m: int, k_max: float = 1.0) -> "MutationSpace2D":
        nodes = np.linspace(0.0, k_max, m)
        cc, vv = np.meshgrid(nodes, nodes, indexing="ij")
        return cls(np.asarray(fn(cc, vv), dtype=float), k_max)


def _clamped_fraction(x, m: int, k_max: float):
    """Map densities to (element index, local weight), clamping to [0, k_max].

    Returns (lower node index, weight of the upper node, out-of-range count).
    """
    x = np.asarray(x, dtype=float)
    oob = int(np.count_nonzero(x < 0.0) + np.count_nonzero(x > k_max))
    s = np.clip(x, 0.0, k_max) * ((m - 1) / k_max)
    lower = np.minimum(s.astype(np.int64), m - 2)
    return lower, s - lower, oob


def eval_1d(space: MutationSpace1D, x):
    """Piecewise-linear evaluation; exact at nodes, clamped outside [0, k_max]."""
    lower, w, oob = _clamped_fraction(x, space.m, space.k_max)
    space.out_of_range_count += oob
    out = (1.0 - w) * space.coeffs[lower] + w * space.coeffs[lower + 1]
    return out if out.ndim else float(out)


def eval_2d(space: MutationSpace2D, c, v):
    """Bilinear evaluation on the containing tile, clamped per axis."""
    lc, wc, oob_c = _clamped_fraction(c, space.m, space.k_max)
    lv, wv, oob_v = _clamped_fraction(v, space.m, space.k_max)
    space.out_of_range_count += oob_c + oob_v
    a = space.coeffs
    out = (
        (1.0 - wc) * (1.0 - wv) * a[lc, lv]
        + wc * (1.0 - wv) * a[lc + 1, lv]
        + (1.0 - wc) * wv * a[lc, lv + 1]
        + wc * wv * a[lc + 1, lv + 1]
    )
    return out if out.ndim else float(out)


def combined_trial_law(
    case: MutationCase,
    m1d: MutationSpace1D | None,
    m2d: MutationSpace2D | None,
    c1,
    v,
    p: KineticParams,
):
    """Mutation flux density of a trial law, by case.

    Case I evaluates the 1-D law at the cell density; case II multiplies the
    known linear cell factor by the 1-D law of the matrix density; case III
    evaluates the 2-D law at (cells, matrix).
    """
    case = MutationCase.parse(case)
    if case == MutationCase.I:
        if m1d is None:
            raise ConfigurationError("case i needs a 1-D trial space")
        return eval_1d(m1d, c1)
    if case == MutationCase.II:
        if m1d is None:
            raise ConfigurationError("case ii needs a 1-D trial space")
        return p.delta_0 * np.asarray(c1, dtype=float) * eval_1d(m1d, v)
    if m2d is None:
        raise ConfigurationError("case iii needs a 2-D trial space")
    return eval_2d(m2d, c1, v)


@dataclass(frozen=True)
class AccessibleRegion:
    """Componentwise range visited by (c1, v) over a simulation."""

    c1_min: float
    c1_max: float
    v_min: float
    v_max: float

    def __post_init__(self):
        if self.c1_min > self.c1_max or self.v_min > self.v_max:
            raise ValueError("accessible region has min > max")

    def hull(self, other: "AccessibleRegion") -> "AccessibleRegion":
        return AccessibleRegion(
            min(self.c1_min, other.c1_min),
            max(self.c1_max, other.c1_max),
            min(self.v_min, other.v_min),
            max(self.v_max, other.v_max),
        )

    def as_dict(self) -> dict:
        return {
            "c1_min": self.c1_min,
            "c1_max": self.c1_max,
            "v_min": self.v_min,
            "v_max": self.v_max,
        }


def accessible_region(states) -> AccessibleRegion:
    """Extrema of c1 and v over all grid points of a sequence of states."""
    states = list(states)
    if not states:
        raise ValueError("accessible_region needs at least one state")
    return AccessibleRegion(
        min(float(s.c1.min()) for s in states),
        max(float(s.c1.max()) for s in states),
        min(float(s.v.min()) for s in states),
        max(float(s.v.max()) for s in states),
    )


# --- law objects plugged into the forward solvers ---------------------------

# Codes shared with the compiled kernels.
LAW_ZERO = 0
LAW_TRUE_LINEAR = 1
LAW_TRUE_WINDOW = 2
LAW_TRIAL_1D_CELLS = 3
LAW_TRIAL_1D_ECM = 4
LAW_TRIAL_2D = 5


@dataclass
class MutationLaw:
    """A mutation law in the structured form both solver engines understand.

    Callable on (c1, v) field arrays; the compiled local-model engine instead
    reads ``kind``/``coeffs`` directly.  Arbitrary Python callables can also
    be passed to the solvers, at the cost of the slower engine.
    """

    kind: int
    coeffs: np.ndarray | None
    table_m: int
    delta_0: float
    kappa: float
    k_max: float

    def __post_init__(self):
        if self.coeffs is not None:
            self.coeffs = np.ascontiguousarray(self.coeffs, dtype=float)
        self._space1d = None
        self._space2d = None
        if self.kind in (LAW_TRIAL_1D_CELLS, LAW_TRIAL_1D_ECM):
            self._space1d = MutationSpace1D(self.coeffs, self.k_max)
        elif self.kind == LAW_TRIAL_2D:
            self._space2d = MutationSpace2D(
                self.coeffs.reshape(self.table_m, self.table_m), self.k_max
            )

    @property
    def clamp_count(self) -> int:
        """Out-of-range evaluations seen by the Python-path trial spaces."""
        if self._space1d is not None:
            return self._space1d.out_of_range_count
        if self._space2d is not None:
            return self._space2d.out_of_range_count
        return 0

    @classmethod
    def zero(cls) -> "MutationLaw":
        return cls(LAW_ZERO, None, 0, 0.0, 0.5, 1.0)

    @classmethod
    def true_law(cls, law: TrueMutationLaw, p: KineticParams) -> "MutationLaw":
        kind = LAW_TRUE_LINEAR if law == TrueMutationLaw.LINEAR_IN_C1 else LAW_TRUE_WINDOW
        return cls(kind, None, 0, p.delta_0, p.kappa, p.k_c)

    @classmethod
    def trial(
        cls,
        case: MutationCase,
        p: KineticParams,
        m1d: MutationSpace1D | None = None,
        m2d: MutationSpace2D | None = None,
    ) -> "MutationLaw":
        case = MutationCase.parse(case)
        if case == MutationCase.I:
            if m1d is None:
                raise ConfigurationError("case i needs a 1-D trial space")
            return cls(LAW_TRIAL_1D_CELLS, m1d.coeffs.copy(), m1d.m, p.delta_0, p.kappa, m1d.k_max)
        if case == MutationCase.II:
            if m1d is None:
                raise ConfigurationError("case ii needs a 1-D trial space")
            return cls(LAW_TRIAL_1D_ECM, m1d.coeffs.copy(), m1d.m, p.delta_0, p.kappa, m1d.k_max)
        if m2d is None:
            raise ConfigurationError("case iii needs a 2-D trial space")
        return cls(LAW_TRIAL_2D, m2d.coeffs.copy().ravel(), m2d.m, p.delta_0, p.kappa, m2d.k_max)

    @classmethod
    def from_coeffs(cls, case: MutationCase, coeffs: np.ndarray, p: KineticParams, k_max: float) -> "MutationLaw":
        """Trial law straight from an optimiser coefficient vector."""
        case = MutationCase.parse(case)
        coeffs = np.asarray(coeffs, dtype=float)
        if case == MutationCase.III:
            m = int(round(np.sqrt(coeffs.size)))
            if m * m != coeffs.size:
                raise ConfigurationError("case iii coefficient vector is not square")
            return cls(LAW_TRIAL_2D, coeffs.copy(), m, p.delta_0, p.kappa, k_max)
        kind = LAW_TRIAL_1D_CELLS if case == MutationCase.I else LAW_TRIAL_1D_ECM
        return cls(kind, coeffs.copy(), coeffs.size, p.delta_0, p.kappa, k_max)

    def space_1d(self) -> MutationSpace1D:
        if self._space1d is None:
            raise ConfigurationError("law holds no 1-D trial space")
        return self._space1d

    def space_2d(self) -> MutationSpace2D:
        if self._space2d is None:
            raise ConfigurationError("law holds no 2-D trial space")
        return self._space2d

    def __call__(self, c1, v):
        if self.kind == LAW_ZERO:
            return np.zeros_like(np.asarray(c1, dtype=float))
        if self.kind == LAW_TRUE_LINEAR:
            return self.delta_0 * np.asarray(c1, dtype=float) * 1.0
        if self.kind == LAW_TRUE_WINDOW:
            return self.delta_0 * np.asarray(c1, dtype=float) * ecm_window_factor(v, self.kappa)
        if self.kind == LAW_TRIAL_1D_CELLS:
            return eval_1d(self._space1d, c1)
        if self.kind == LAW_TRIAL_1D_ECM:
            return self.delta_0 * np.asarray(c1, dtype=float) * eval_1d(self._space1d, v)
        return eval_2d(self._space2d, c1, v)


# --- serialisation -----------------------------------------------------------


def write_space_csv(space, path) -> None:
    """CSV dump: two columns (node, value) in 1-D, matrix with axis headers in 2-D."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if isinstance(space, MutationSpace1D):
            writer.writerow(["node", "value"])
            for x, c in zip(space.nodes, space.coeffs):
                writer.writerow([f"{x:.15g}", f"{c:.15g}"])
        else:
            writer.writerow([""] + [f"{x:.15g}" for x in space.nodes])
            for x, row in zip(space.nodes, space.coeffs):
                writer.writerow([f"{x:.15g}"] + [f"{c:.15g}" for c in row])


def read_space_csv(path):
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if rows[0][0] == "node":
        values = np.array([float(r[1]) for r in rows[1:]])
        k_max = float(rows[-1][0])
        return MutationSpace1D(values, k_max)
    k_max = float(rows[0][-1])
    values = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return MutationSpace2D(values, k_max)

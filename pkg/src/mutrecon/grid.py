"""Square tissue grid, density fields and shared finite-difference stencils.

The tissue region is a square covered by a vertex-centred N x N lattice of
nodes (nodes sit on the boundary).  Zero-flux boundaries are closed by
mirroring about the boundary node: the ghost value one step outside the grid
equals the value one step inside, so the centred normal derivative vanishes
at every boundary node.

A density field is a plain float64 ``(N, N)`` array indexed ``[i, j]`` with
``i`` along x and ``j`` along y.  Mass totals use the trapezoidal quadrature
weights of the vertex-centred lattice (half weight on edges, quarter on
corners); with those weights both stencils below conserve mass to rounding.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

Field = np.ndarray


class NumericalError(RuntimeError):
    """A solver produced a non-finite value."""


@dataclass(frozen=True)
class Grid:
    """Uniform square lattice with node coordinates origin + k*spacing."""

    n: int
    spacing: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"grid needs at least 3 nodes per side, got {self.n}")
        if self.spacing <= 0.0:
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")

    @classmethod
    def from_side(cls, side: float, spacing: float, origin=(0.0, 0.0)) -> "Grid":
        n_cells = side / spacing
        n = int(round(n_cells)) + 1
        if abs(spacing * (n - 1) - side) > 1e-9 * max(side, 1.0):
            raise ValueError(f"spacing {spacing} does not tile side {side}")
        return cls(n=n, spacing=spacing, origin=origin)

    @property
    def side(self) -> float:
        return self.spacing * (self.n - 1)

    def coords(self) -> np.ndarray:
        """1-D node coordinates along one axis."""
        return self.origin[0] + self.spacing * np.arange(self.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) coordinate arrays, indexed like fields."""
        x = self.origin[0] + self.spacing * np.arange(self.n)
        y = self.origin[1] + self.spacing * np.arange(self.n)
        return np.meshgrid(x, y, indexing="ij")

    def zeros(self) -> Field:
        return np.zeros((self.n, self.n))


@dataclass
class State:
    """Cell and matrix densities at one time instant, sharing one grid."""

    c1: Field
    c2: Field
    v: Field
    time: float
    grid: Grid = field(repr=False, default=None)

    def __post_init__(self):
        if not (self.c1.shape == self.c2.shape == self.v.shape):
            raise ValueError("state fields must share one grid shape")
        if self.grid is not None and self.c1.shape != (self.grid.n, self.grid.n):
            raise ValueError("state fields do not match the grid")

    def copy(self) -> "State":
        return State(self.c1.copy(), self.c2.copy(), self.v.copy(), self.time, self.grid)

    def fields(self) -> tuple[Field, Field, Field]:
        return self.c1, self.c2, self.v


def neumann_neighbor(values: Field, i: int, j: int) -> float:
    """Value at (i, j), with one-step off-grid indices mirrored about the
    boundary node (index -1 maps to 1, index N maps to N-2)."""
    n = values.shape[0]
    if i < -1 or i > n or j < -1 or j > n:
        raise IndexError(f"index ({i}, {j}) is more than one step off a {n}x{n} grid")
    if i == -1:
        i = 1
    elif i == n:
        i = n - 2
    if j == -1:
        j = 1
    elif j == n:
        j = n - 2
    return values[i, j]


def laplacian(values: Field, i: int, j: int, spacing: float) -> float:
    """Five-point Laplacian at one node with mirrored ghost values."""
    centre = values[i, j]
    return (
        neumann_neighbor(values, i - 1, j)
        + neumann_neighbor(values, i + 1, j)
        + neumann_neighbor(values, i, j - 1)
        + neumann_neighbor(values, i, j + 1)
        - 4.0 * centre
    ) / spacing**2


def haptotaxis_divergence(c: Field, v: Field, i: int, j: int, spacing: float, eta: float) -> float:
    """Conservative discretisation of eta * div(c grad v) at one node."""
    cc = c[i, j]
    vc = v[i, j]
    cxp = neumann_neighbor(c, i + 1, j)
    cxm = neumann_neighbor(c, i - 1, j)
    cyp = neumann_neighbor(c, i, j + 1)
    cym = neumann_neighbor(c, i, j - 1)
    vxp = neumann_neighbor(v, i + 1, j)
    vxm = neumann_neighbor(v, i - 1, j)
    vyp = neumann_neighbor(v, i, j + 1)
    vym = neumann_neighbor(v, i, j - 1)
    bracket = (
        (cc + cxp) * (vxp - vc)
        - (cc + cxm) * (vc - vxm)
        + (cc + cyp) * (vyp - vc)
        - (cc + cym) * (vc - vym)
    )
    return eta / (2.0 * spacing**2) * bracket


def reflect_pad(values: Field) -> Field:
    """Pad by one ghost layer mirrored about the boundary nodes."""
    return np.pad(values, 1, mode="reflect")


def laplacian_field(values: Field, spacing: float) -> Field:
    """Five-point Laplacian of the whole field, mirrored ghosts."""
    p = reflect_pad(values)
    return (
        p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * values
    ) / spacing**2


def haptotaxis_divergence_field(c: Field, v: Field, spacing: float, eta: float) -> Field:
    """eta * div(c grad v) over the whole field, mirrored ghosts."""
    pc = reflect_pad(c)
    pv = reflect_pad(v)
    bracket = (
        (c + pc[2:, 1:-1]) * (pv[2:, 1:-1] - v)
        - (c + pc[:-2, 1:-1]) * (v - pv[:-2, 1:-1])
        + (c + pc[1:-1, 2:]) * (pv[1:-1, 2:] - v)
        - (c + pc[1:-1, :-2]) * (v - pv[1:-1, :-2])
    )
    return eta / (2.0 * spacing**2) * bracket


def quadrature_weights(n: int) -> np.ndarray:
    """Trapezoidal node weights of the vertex-centred lattice."""
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return np.outer(w, w)


def total_mass(values: Field, grid: Grid) -> float:
    """Trapezoidal integral of a field over the tissue square."""
    return float(np.sum(quadrature_weights(grid.n) * values) * grid.spacing**2)


def assert_finite(values: Field, context: str = "field") -> None:
    """Raise ``NumericalError`` naming the first non-finite node, if any."""
    finite = np.isfinite(values)
    if not finite.all():
        i, j = np.argwhere(~finite)[0]
        raise NumericalError(f"non-finite value in {context} at node ({i}, {j})")


def write_field_csv(values: Field, path) -> None:
    """Row-major CSV dump, 15 significant digits per value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in values:
            writer.writerow([f"{x:.15g}" for x in row])


def read_field_csv(path) -> Field:
    with open(path, newline="") as fh:
        rows = [[float(x) for x in row] for row in csv.reader(fh) if row]
    values = np.array(rows)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"{path} does not hold a square field")
    return values


def field_csv_name(name: str, time: float) -> str:
    return f"{name}_t{time:g}.csv"

"""
Structured grids, node fields and finite-difference machinery.

A grid is a box in R^N split as X = (x, y) with x in R^m and y in R^(N-m).
Node ordering is row-major over the axes in declaration order, so
``values.ravel()`` is the canonical degree-of-freedom vector.

Two derivative routes are provided:

* an array route (``diff_axis``, ``forward_diff``, ...) built from numpy
  slicing, used by residuals and diagnostics;
* a sparse-matrix route (``nodal_diff_matrix``, ``simplex_operators``,
  ...) used by the solver and the stability eigenproblem.

Energies and residuals use piecewise-linear interpolation on the Kuhn
triangulation of the grid cells (``simplex_gradients``).

Both implement the same stencils, which lets the test-suite compare them.

Periodic axes store the duplicate end node: node ``n-1`` coincides with
node ``0`` and carries zero quadrature weight.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatchError, DomainError, ModeError, SamplingError

BOUNDARY_KINDS = ("dirichlet", "periodic", "neumann")


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid with a fibered split of the axes.

    Attributes:
        extents: per-axis ``(lo, hi)``.
        nodes: per-axis node counts.
        m: number of leading "x" axes; the remaining ``N - m`` are "y" axes.
        boundary: per-axis flag in ``BOUNDARY_KINDS``.
    """

    extents: tuple
    nodes: tuple
    m: int
    boundary: tuple

    @property
    def N(self) -> int:
        return len(self.nodes)

    @property
    def dim_y(self) -> int:
        return self.N - self.m

    @property
    def shape(self) -> tuple:
        return tuple(self.nodes)

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def spacing(self) -> tuple:
        return tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(self.extents, self.nodes))

    @property
    def h_max(self) -> float:
        return max(self.spacing)

    def axis(self, k: int) -> np.ndarray:
        lo, hi = self.extents[k]
        return np.linspace(lo, hi, self.nodes[k])

    @property
    def axes(self) -> list:
        return [self.axis(k) for k in range(self.N)]

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``grid.shape + (N,)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def radius(self, center=None) -> np.ndarray:
        pts = self.points()
        if center is not None:
            pts = pts - np.asarray(center, dtype=float)
        return np.linalg.norm(pts, axis=-1)

    def weights_1d(self, k: int) -> np.ndarray:
        n, h = self.nodes[k], self.spacing[k]
        w = np.full(n, h)
        if self.boundary[k] == "periodic":
            w[-1] = 0.0
        else:
            w[0] = w[-1] = 0.5 * h
        return w

    def weights(self) -> np.ndarray:
        """Trapezoidal nodal quadrature weights."""
        w = np.ones(())
        for k in range(self.N):
            w = np.multiply.outer(w, self.weights_1d(k))
        return w

    def free_mask(self) -> np.ndarray:
        """Nodes carrying unknowns: not on a Dirichlet face, not a periodic copy."""
        mask = np.ones(self.shape, dtype=bool)
        for k, kind in enumerate(self.boundary):
            idx = [slice(None)] * self.N
            if kind == "dirichlet":
                idx[k] = 0
                mask[tuple(idx)] = False
                idx[k] = -1
                mask[tuple(idx)] = False
            elif kind == "periodic":
                idx[k] = -1
                mask[tuple(idx)] = False
        return mask

    def interior_mask(self, width: int = 1) -> np.ndarray:
        """Nodes at least ``width`` nodes away from every non-periodic face."""
        mask = np.ones(self.shape, dtype=bool)
        for k, kind in enumerate(self.boundary):
            if kind == "periodic":
                continue
            idx = [slice(None)] * self.N
            idx[k] = slice(0, width)
            mask[tuple(idx)] = False
            idx[k] = slice(self.nodes[k] - width, None)
            mask[tuple(idx)] = False
        return mask

    def refined(self, factor: int = 2) -> "Grid":
        nodes = tuple((n - 1) * factor + 1 for n in self.nodes)
        return Grid(self.extents, nodes, self.m, self.boundary)

    def contains_ball(self, R: float, center=None) -> bool:
        c = np.zeros(self.N) if center is None else np.asarray(center, dtype=float)
        return all(lo <= c[k] - R and c[k] + R <= hi for k, (lo, hi) in enumerate(self.extents))

    def to_dict(self) -> dict:
        return {
            "extents": [list(e) for e in self.extents],
            "nodes": list(self.nodes),
            "m": self.m,
            "boundary": list(self.boundary),
        }


def make_grid(extents, nodes_per_axis, m: int, boundary_flags=None) -> Grid:
    """Build a :class:`Grid`, validating the fibered-split invariants."""
    extents = [tuple(float(v) for v in e) for e in extents]
    N = len(extents)
    if isinstance(nodes_per_axis, (int, np.integer)):
        nodes = (int(nodes_per_axis),) * N
    else:
        nodes = tuple(int(n) for n in nodes_per_axis)
    if boundary_flags is None:
        boundary_flags = ("dirichlet",) * N
    elif isinstance(boundary_flags, str):
        boundary_flags = (boundary_flags,) * N
    boundary = tuple(boundary_flags)
    if len(nodes) != N or len(boundary) != N:
        raise DimensionMismatchError(
            f"extents give N={N} axes but got {len(nodes)} node counts and {len(boundary)} boundary flags"
        )
    if not 1 <= m:
        raise DomainError("m must be >= 1")
    if m >= N:
        raise DomainError(f"m must be < N (got m={m}, N={N})")
    for k, (lo, hi) in enumerate(extents):
        if not hi > lo:
            raise DomainError(f"axis {k}: empty extent [{lo}, {hi}]")
        if nodes[k] < 5:
            raise DomainError(f"axis {k}: need at least 5 nodes, got {nodes[k]}")
        if boundary[k] not in BOUNDARY_KINDS:
            raise DomainError(f"axis {k}: unknown boundary flag {boundary[k]!r}")
    return Grid(tuple(extents), nodes, int(m), boundary)


@dataclass(frozen=True)
class AnalyticField:
    """Closed-form scalar field with gradient and Hessian callbacks.

    Each callback takes points of shape ``(..., N)`` and returns arrays of
    shape ``(...)``, ``(..., N)`` and ``(..., N, N)`` respectively.
    """

    value: Callable
    gradient: Callable
    hessian: Callable

    def __add__(self, other: "AnalyticField") -> "AnalyticField":
        return AnalyticField(
            lambda X: self.value(X) + other.value(X),
            lambda X: self.gradient(X) + other.gradient(X),
            lambda X: self.hessian(X) + other.hessian(X),
        )

    def scaled(self, c: float) -> "AnalyticField":
        return AnalyticField(
            lambda X: c * self.value(X),
            lambda X: c * self.gradient(X),
            lambda X: c * self.hessian(X),
        )

    def composed_with_rotation(self, Q: np.ndarray, m: int) -> "AnalyticField":
        """Field ``X -> f(x, Q y)`` for an orthogonal matrix ``Q`` acting on y."""
        Q = np.asarray(Q, dtype=float)
        N = m + Q.shape[0]
        T = np.eye(N)
        T[m:, m:] = Q

        def value(X):
            return self.value(X @ T.T)

        def gradient(X):
            return self.gradient(X @ T.T) @ T

        def hessian(X):
            return np.einsum("ai,...ab,bj->...ij", T, self.hessian(X @ T.T), T)

        return AnalyticField(value, gradient, hessian)


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    analytic: AnalyticField | None = field(default=None)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise DimensionMismatchError(f"values shape {vals.shape} != grid shape {self.grid.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def provenance(self) -> str:
        return "sampled" if self.analytic is None else "analytic"

    def __add__(self, other):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise DimensionMismatchError("fields live on different grids")
            an = self.analytic + other.analytic if self.analytic and other.analytic else None
            return ScalarField(self.grid, self.values + other.values, an)
        return NotImplemented

    def __mul__(self, c):
        if np.isscalar(c):
            an = self.analytic.scaled(float(c)) if self.analytic else None
            return ScalarField(self.grid, c * self.values, an)
        return NotImplemented

    __rmul__ = __mul__

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)


def sample(analytic: AnalyticField, grid: Grid) -> ScalarField:
    pts = grid.points()
    vals = np.broadcast_to(np.asarray(analytic.value(pts), dtype=float), grid.shape)
    bad = ~np.isfinite(vals)
    if bad.any():
        where = tuple(int(i) for i in np.argwhere(bad)[0])
        raise SamplingError(f"non-finite value at node {where}, X={pts[where].tolist()}")
    return ScalarField(grid, vals, analytic)


def constant_field(c: float, N: int) -> AnalyticField:
    return AnalyticField(
        lambda X: np.full(X.shape[:-1], float(c)),
        lambda X: np.zeros(X.shape),
        lambda X: np.zeros(X.shape + (N,)),
    )


def affine_field(a, b: float = 0.0) -> AnalyticField:
    a = np.asarray(a, dtype=float)
    N = a.size
    return AnalyticField(
        lambda X: X @ a + b,
        lambda X: np.broadcast_to(a, X.shape).copy(),
        lambda X: np.zeros(X.shape + (N,)),
    )


def quadratic_field(Q) -> AnalyticField:
    """``u = X^T Q X / 2`` for symmetric Q."""
    Q = np.asarray(Q, dtype=float)
    return AnalyticField(
        lambda X: 0.5 * np.einsum("...i,ij,...j->...", X, Q, X),
        lambda X: X @ Q.T,
        lambda X: np.broadcast_to(Q, X.shape[:-1] + Q.shape).copy(),
    )


# ---------------------------------------------------------------------------
# Array stencils
# ---------------------------------------------------------------------------

def _take(a, idx, axis):
    sl = [slice(None)] * a.ndim
    sl[axis] = idx
    return a[tuple(sl)]


def fill_periodic(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Copy node 0 onto the duplicate end node along every periodic axis."""
    out = np.array(values, dtype=float)
    for k, kind in enumerate(grid.boundary):
        if kind == "periodic":
            sl_last = [slice(None)] * out.ndim
            sl_first = [slice(None)] * out.ndim
            sl_last[k], sl_first[k] = -1, 0
            out[tuple(sl_last)] = out[tuple(sl_first)]
    return out


def diff_axis(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Second-order nodal first derivative along ``axis``.

    Central in the interior, one-sided second order at non-periodic ends,
    wrap-around on periodic axes. Leading dimensions beyond the grid are
    not allowed; trailing ones are (the grid axes come first).
    """
    h = grid.spacing[axis]
    if grid.boundary[axis] == "periodic":
        u = _take(values, slice(0, -1), axis)
        d = (np.roll(u, -1, axis=axis) - np.roll(u, 1, axis=axis)) / (2 * h)
        return np.concatenate([d, _take(d, slice(0, 1), axis)], axis=axis)
    return np.gradient(values, h, axis=axis, edge_order=2)


def forward_diff(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Differences at half nodes ``i + 1/2`` along ``axis``."""
    h = grid.spacing[axis]
    if grid.boundary[axis] == "periodic":
        u = _take(values, slice(0, -1), axis)
        return (np.roll(u, -1, axis=axis) - u) / h
    return np.diff(values, axis=axis) / h


# ---------------------------------------------------------------------------
# Sparse stencils (same formulas, assembled as matrices on the raveled vector)
# ---------------------------------------------------------------------------

def _nodal_diff_1d(n: int, h: float, kind: str) -> sp.csr_matrix:
    if kind == "periodic":
        M = n - 1
        rows, cols, vals = [], [], []
        for i in range(M):
            rows += [i, i]
            cols += [(i + 1) % M, (i - 1) % M]
            vals += [0.5 / h, -0.5 / h]
        rows += [n - 1, n - 1]
        cols += [1 % M, (M - 1) % M]
        vals += [0.5 / h, -0.5 / h]
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    D = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        D[i, i - 1] = -0.5 / h
        D[i, i + 1] = 0.5 / h
    D[0, 0:3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[n - 1, n - 3:n] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return D.tocsr()


def _kron_axis(grid: Grid, axis: int, op_axis: sp.spmatrix, other_ops=None) -> sp.csr_matrix:
    mats = []
    for k in range(grid.N):
        if k == axis:
            mats.append(op_axis)
        elif other_ops and k in other_ops:
            mats.append(other_ops[k])
        else:
            mats.append(sp.identity(grid.nodes[k], format="csr"))
    out = mats[0]
    for M in mats[1:]:
        out = sp.kron(out, M, format="csr")
    return out


def nodal_diff_matrix(grid: Grid, axis: int) -> sp.csr_matrix:
    return _kron_axis(grid, axis, _nodal_diff_1d(grid.nodes[axis], grid.spacing[axis], grid.boundary[axis]))


def forward_diff_matrix(grid: Grid, axis: int) -> sp.csr_matrix:
    """Matrix of :func:`forward_diff` (rows: the ``n - 1`` intervals along ``axis``)."""
    h = grid.spacing[axis]
    return (_corner_matrix_axis(grid, axis, 1) - _corner_matrix_axis(grid, axis, 0)) / h


def _shift_1d(n: int, bit: int, kind: str) -> sp.csr_matrix:
    """Cell-to-node selection: cell ``i`` picks node ``i + bit`` (wrapping when periodic)."""
    rows = np.arange(n - 1)
    cols = rows + bit
    if kind == "periodic":
        cols = cols % (n - 1)
    return sp.csr_matrix((np.ones(n - 1), (rows, cols)), shape=(n - 1, n))


def _corner_matrix_axis(grid: Grid, axis: int, bit: int) -> sp.csr_matrix:
    mats = [
        _shift_1d(n, bit, kind) if k == axis else sp.identity(n, format="csr")
        for k, (n, kind) in enumerate(zip(grid.nodes, grid.boundary))
    ]
    out = mats[0]
    for M in mats[1:]:
        out = sp.kron(out, M, format="csr")
    return out


# ---------------------------------------------------------------------------
# Kuhn (Freudenthal) triangulation
#
# Every cell is split into N! simplices, one per axis permutation; the
# simplex for ``perm`` has vertices c, c + e_perm[0], c + e_perm[0] + e_perm[1], ...
# Piecewise-linear interpolants have a constant gradient on each simplex whose
# component ``perm[k]`` is the forward difference along the k-th path edge.
# ---------------------------------------------------------------------------

def kuhn_permutations(N: int) -> list:
    return list(itertools.permutations(range(N)))


def cell_shape(grid: Grid) -> tuple:
    return tuple(n - 1 for n in grid.nodes)


def simplex_volume(grid: Grid) -> float:
    return float(np.prod(grid.spacing)) / math.factorial(grid.N)


def _corner(values: np.ndarray, offset) -> np.ndarray:
    return values[tuple(slice(o, o + n - 1) for o, n in zip(offset, values.shape))]


def simplex_gradients(values: np.ndarray, grid: Grid) -> np.ndarray:
    """P1 gradients, shape ``(N!,) + cell_shape + (N,)`` (array route)."""
    v = fill_periodic(np.asarray(values, dtype=float), grid)
    perms = kuhn_permutations(grid.N)
    out = np.empty((len(perms),) + cell_shape(grid) + (grid.N,))
    h = grid.spacing
    for p, perm in enumerate(perms):
        off = [0] * grid.N
        prev = _corner(v, off)
        for ax in perm:
            off[ax] = 1
            cur = _corner(v, off)
            out[p, ..., ax] = (cur - prev) / h[ax]
            prev = cur
    return out


def simplex_barycenters(grid: Grid) -> np.ndarray:
    """Barycenters, shape ``(N!,) + cell_shape + (N,)``."""
    pts = grid.points()
    lower = _corner(pts, [0] * grid.N)
    perms = kuhn_permutations(grid.N)
    out = np.empty((len(perms),) + lower.shape)
    h = np.asarray(grid.spacing)
    for p, perm in enumerate(perms):
        shift = np.zeros(grid.N)
        for k, ax in enumerate(perm):
            shift[ax] = h[ax] * (grid.N - k) / (grid.N + 1)
        out[p] = lower + shift
    return out


def _corner_matrix(grid: Grid, offset) -> sp.csr_matrix:
    mats = [_shift_1d(n, b, kind) for n, b, kind in zip(grid.nodes, offset, grid.boundary)]
    out = mats[0]
    for M in mats[1:]:
        out = sp.kron(out, M, format="csr")
    return out


@lru_cache(maxsize=32)
def simplex_operators(grid: Grid) -> tuple:
    """Sparse route: per permutation ``(G_0, ..., G_{N-1}, x_barycenters)``.

    ``G_j`` maps the raveled node vector to component ``j`` of the simplex
    gradient on every cell (raveled), matching :func:`simplex_gradients`.
    """
    h = grid.spacing
    xb = simplex_barycenters(grid)[..., : grid.m]
    out = []
    for p, perm in enumerate(kuhn_permutations(grid.N)):
        off = [0] * grid.N
        prev = _corner_matrix(grid, off)
        G = [None] * grid.N
        for ax in perm:
            off[ax] = 1
            cur = _corner_matrix(grid, off)
            G[ax] = ((cur - prev) / h[ax]).tocsr()
            prev = cur
        out.append((tuple(G), xb[p].reshape(-1, grid.m)))
    return tuple(out)


def cell_mask(grid: Grid, node_mask: np.ndarray) -> np.ndarray:
    """Cells whose 2^N corners all lie in ``node_mask``."""
    m = np.asarray(node_mask, dtype=bool)
    out = np.ones(cell_shape(grid), dtype=bool)
    for off in itertools.product((0, 1), repeat=grid.N):
        out &= _corner(m, off)
    return out


# ---------------------------------------------------------------------------
# Field-level derivative operations
# ---------------------------------------------------------------------------

def _require_analytic(f: ScalarField):
    if f.analytic is None:
        raise ModeError("analytic mode requested but the field has no closed-form callbacks")


def grad(f: ScalarField, mode: str = "fd") -> np.ndarray:
    """Gradient as an array of shape ``grid.shape + (N,)``."""
    if mode == "analytic":
        _require_analytic(f)
        return np.asarray(f.analytic.gradient(f.grid.points()), dtype=float)
    if mode != "fd":
        raise ModeError(f"unknown mode {mode!r}")
    return np.stack([diff_axis(f.values, f.grid, k) for k in range(f.grid.N)], axis=-1)


def hess(f: ScalarField, mode: str = "fd") -> np.ndarray:
    """Symmetrized Hessian, shape ``grid.shape + (N, N)``."""
    if mode == "analytic":
        _require_analytic(f)
        H = np.asarray(f.analytic.hessian(f.grid.points()), dtype=float)
    elif mode == "fd":
        g = grad(f, "fd")
        H = np.stack([diff_axis(g, f.grid, k) for k in range(f.grid.N)], axis=-1)
    else:
        raise ModeError(f"unknown mode {mode!r}")
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def y_grad(f: ScalarField, mode: str = "fd") -> np.ndarray:
    return grad(f, mode)[..., f.grid.m:]


# ---------------------------------------------------------------------------
# Masks and quadrature
# ---------------------------------------------------------------------------

def ball_mask(grid: Grid, R: float, center=None) -> np.ndarray:
    return grid.radius(center) <= R


def annulus_mask(grid: Grid, r_in: float, r_out: float, center=None) -> np.ndarray:
    r = grid.radius(center)
    return (r > r_in) & (r <= r_out)


def integrate(grid: Grid, values: np.ndarray, mask: np.ndarray | None = None) -> float:
    w = grid.weights()
    if mask is not None:
        w = w * mask
    return float(np.sum(w * values))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

FIELD_MAGIC = "# fibered-field v1"


def save_field(path, f: ScalarField) -> None:
    """Write ``f`` as CSV: four header rows then row-major node values.

    Layout::

        # fibered-field v1
        shape,n_1,...,n_N
        extents,lo_1,hi_1,...,lo_N,hi_N
        m,<m>
        boundary,<flag_1>,...,<flag_N>
        <value>          (one per line, %.17g, row-major)
    """
    g = f.grid
    with open(path, "w") as fh:
        fh.write(FIELD_MAGIC + "\n")
        fh.write("shape," + ",".join(str(n) for n in g.nodes) + "\n")
        fh.write("extents," + ",".join(repr(float(v)) for e in g.extents for v in e) + "\n")
        fh.write(f"m,{g.m}\n")
        fh.write("boundary," + ",".join(g.boundary) + "\n")
        np.savetxt(fh, f.values.ravel(), fmt="%.17g")


def load_field(path) -> ScalarField:
    with open(path) as fh:
        magic = fh.readline().strip()
        if magic != FIELD_MAGIC:
            raise SamplingError(f"{path}: not a field file")
        shape = tuple(int(v) for v in fh.readline().strip().split(",")[1:])
        ext = [float(v) for v in fh.readline().strip().split(",")[1:]]
        m = int(fh.readline().strip().split(",")[1])
        boundary = tuple(fh.readline().strip().split(",")[1:])
        vals = np.loadtxt(fh, dtype=float, ndmin=1)
    extents = [(ext[2 * k], ext[2 * k + 1]) for k in range(len(shape))]
    grid = make_grid(extents, shape, m, boundary)
    return ScalarField(grid, vals.reshape(shape))


def random_smooth_field(rng: np.random.Generator, N: int, modes: int = 4, scale: float = 1.0) -> AnalyticField:
    """Sum of random plane waves plus a random quadratic; smooth, closed form."""
    W = rng.normal(size=(modes, N)) * scale
    c = rng.normal(size=modes)
    phi = rng.uniform(0, 2 * np.pi, size=modes)
    A = rng.normal(size=(N, N)) * 0.1
    Q = A + A.T
    b = rng.normal(size=N)

    def value(X):
        arg = X @ W.T + phi
        return np.sin(arg) @ c + 0.5 * np.einsum("...i,ij,...j->...", X, Q, X) + X @ b

    def gradient(X):
        arg = X @ W.T + phi
        return (np.cos(arg) * c) @ W + X @ Q + b

    def hessian(X):
        arg = X @ W.T + phi
        return -np.einsum("...k,ki,kj->...ij", np.sin(arg) * c, W, W) + Q

    return AnalyticField(value, gradient, hessian)

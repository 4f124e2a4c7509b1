"""
The quasilinear system, its coefficients and coupling potentials.

Sign convention: the system solved is

    -div(a_i(x, |grad u^i|) grad u^i) = F_i(x, u^1, ..., u^n),

where ``F_i = dF/d xi^i``. The associated energy is
``sum_i int Lambda2_i(x, |grad u^i|) - int F``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import jsonschema
import numpy as np
from scipy import integrate

from . import fields as fl
from .errors import ConfigError, DegenerateGradientError, DimensionMismatchError, InputError

# Gauss-Legendre nodes for the generic Lambda2 quadrature (substitution s = r^2).
_GL_R, _GL_W = np.polynomial.legendre.leggauss(64)
_GL_R = 0.5 * (_GL_R + 1.0)
_GL_W = 0.5 * _GL_W


@dataclass(frozen=True)
class Coefficient:
    """Diffusion law ``a(x, t)`` with its t-derivative.

    ``value`` and ``dt`` take ``x`` of shape ``(..., m)`` and ``t`` of shape
    ``(...)``. ``Lambda2`` is an optional closed form of
    ``int_0^t a(x, tau) tau dtau``.
    """

    value: Callable
    dt: Callable
    label: str = "custom"
    params: dict = field(default_factory=dict)
    Lambda2_closed: Callable | None = None

    def lambda1(self, x, t):
        return self.dt(x, t) * t + self.value(x, t)

    def lambda2(self, x, t):
        return self.value(x, t)

    def Lambda2(self, x, t):
        t = np.asarray(t, dtype=float)
        if self.Lambda2_closed is not None:
            return self.Lambda2_closed(x, t)
        # int_0^t a(tau) tau dtau = t^2 int_0^1 a(t r^2) r^2 2r dr
        x = np.asarray(x, dtype=float)
        r = _GL_R.reshape((-1,) + (1,) * t.ndim)
        s = r ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = self.value(x[None, ...], t[None, ...] * s) * s * 2 * r
        vals = np.where(np.isfinite(vals), vals, 0.0)
        return t ** 2 * np.tensordot(_GL_W, vals, axes=(0, 0))


def constant_coefficient(c: float = 1.0) -> Coefficient:
    c = float(c)
    return Coefficient(
        value=lambda x, t: np.full(np.shape(t), c),
        dt=lambda x, t: np.zeros(np.shape(t)),
        label="constant",
        params={"c": c},
        Lambda2_closed=lambda x, t: 0.5 * c * np.asarray(t) ** 2,
    )


def p_power_coefficient(p: float, scale: float = 1.0) -> Coefficient:
    """``a(t) = scale * t^(p-2)``: the p-Laplacian law.

    ``scale = p`` makes the energy density exactly ``|grad u|^p``.
    """
    p, scale = float(p), float(scale)

    def value(x, t):
        with np.errstate(divide="ignore"):
            return scale * np.power(np.asarray(t, dtype=float), p - 2)

    def dt(x, t):
        with np.errstate(divide="ignore", invalid="ignore"):
            return scale * (p - 2) * np.power(np.asarray(t, dtype=float), p - 3)

    return Coefficient(value, dt, label=f"p-power p={p:g}", params={"p": p, "scale": scale},
                       Lambda2_closed=lambda x, t: scale * np.abs(t) ** p / p)


def x_modulated_coefficient(p: float, alpha: Callable, label: str = "x-modulated") -> Coefficient:
    """``a(x, t) = alpha(x) t^(p-2)`` with ``alpha`` bounded below; the fibered case."""
    p = float(p)

    def value(x, t):
        with np.errstate(divide="ignore"):
            return alpha(x) * np.power(np.asarray(t, dtype=float), p - 2)

    def dt(x, t):
        with np.errstate(divide="ignore", invalid="ignore"):
            return alpha(x) * (p - 2) * np.power(np.asarray(t, dtype=float), p - 3)

    return Coefficient(value, dt, label=label, params={"p": p},
                       Lambda2_closed=lambda x, t: alpha(x) * np.abs(t) ** p / p)


def lambda_profiles(coef: Coefficient, x, t):
    """Return ``(lambda1, lambda2, Lambda2)`` at ``(x, t)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InputError("t must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = coef.lambda1(x, t)
        l2 = coef.lambda2(x, t)
    return l1, l2, coef.Lambda2(x, t)


def Lambda2_adaptive(coef: Coefficient, x, t: float) -> float:
    """Scalar adaptive quadrature of ``int_0^t a(x, tau) tau dtau``."""
    x = np.asarray(x, dtype=float)
    val, _ = integrate.quad(lambda tau: float(coef.value(x, np.asarray(tau)) * tau), 0.0, float(t), limit=200)
    return val


@dataclass(frozen=True)
class Potential:
    """Coupling potential ``F(x, xi)`` with gradient and (optional) Hessian in xi.

    ``x`` has shape ``(..., m)``, ``xi`` shape ``(..., n)``.
    """

    n: int
    value: Callable
    grad: Callable
    hess_closed: Callable | None = None
    label: str = "custom"
    params: dict = field(default_factory=dict)

    def hess(self, x, xi):
        if self.hess_closed is not None:
            return self.hess_closed(x, xi)
        xi = np.asarray(xi, dtype=float)
        eps = 1e-5 * (1.0 + np.linalg.norm(xi, axis=-1))[..., None]
        cols = []
        for j in range(self.n):
            e = np.zeros(self.n)
            e[j] = 1.0
            cols.append((self.grad(x, xi + eps * e) - self.grad(x, xi - eps * e)) / (2 * eps))
        H = np.stack(cols, axis=-1)
        return 0.5 * (H + np.swapaxes(H, -1, -2))


def _stack(*arrs):
    return np.stack(np.broadcast_arrays(*arrs), axis=-1)


def blwz_potential() -> Potential:
    """``F = -(xi1 xi2)^2 / 2`` so that ``Delta u = u v^2``, ``Delta v = v u^2``."""
    def value(x, xi):
        return -0.5 * xi[..., 0] ** 2 * xi[..., 1] ** 2

    def grad(x, xi):
        u, v = xi[..., 0], xi[..., 1]
        return _stack(-u * v ** 2, -u ** 2 * v)

    def hess(x, xi):
        u, v = xi[..., 0], xi[..., 1]
        return np.stack([_stack(-v ** 2, -2 * u * v), _stack(-2 * u * v, -u ** 2)], axis=-2)

    return Potential(2, value, grad, hess, label="blwz")


def allen_cahn_potential() -> Potential:
    """``F = -(1 - xi^2)^2 / 4``: ``-u'' = u - u^3``, kink ``tanh(y/sqrt 2)``."""
    return Potential(
        1,
        lambda x, xi: -0.25 * (1 - xi[..., 0] ** 2) ** 2,
        lambda x, xi: (xi[..., 0] * (1 - xi[..., 0] ** 2))[..., None],
        lambda x, xi: (1 - 3 * xi[..., 0] ** 2)[..., None, None],
        label="allen-cahn",
    )


def coupled_double_well_potential(beta: float = 0.5) -> Potential:
    """Two Allen-Cahn wells plus ``-beta xi1^2 xi2^2 / 2`` coupling."""
    beta = float(beta)

    def value(x, xi):
        u, v = xi[..., 0], xi[..., 1]
        return -0.25 * (1 - u ** 2) ** 2 - 0.25 * (1 - v ** 2) ** 2 - 0.5 * beta * u ** 2 * v ** 2

    def grad(x, xi):
        u, v = xi[..., 0], xi[..., 1]
        return _stack(u * (1 - u ** 2) - beta * u * v ** 2, v * (1 - v ** 2) - beta * u ** 2 * v)

    def hess(x, xi):
        u, v = xi[..., 0], xi[..., 1]
        return np.stack([_stack(1 - 3 * u ** 2 - beta * v ** 2, -2 * beta * u * v),
                         _stack(-2 * beta * u * v, 1 - 3 * v ** 2 - beta * u ** 2)], axis=-2)

    return Potential(2, value, grad, hess, label="coupled-double-well", params={"beta": beta})


def ginzburg_landau_potential(n: int = 2) -> Potential:
    """Vector well ``-(1 - |xi|^2)^2 / 4``: nonpositive and zero on the unit sphere."""

    def value(x, xi):
        return -0.25 * (1 - np.sum(xi * xi, axis=-1)) ** 2

    def grad(x, xi):
        return (1 - np.sum(xi * xi, axis=-1))[..., None] * xi

    def hess(x, xi):
        s = 1 - np.sum(xi * xi, axis=-1)
        return s[..., None, None] * np.eye(n) - 2 * xi[..., :, None] * xi[..., None, :]

    return Potential(n, value, grad, hess, label="ginzburg-landau", params={"n": n})


def abg_function(xi):
    """The double-well ``(x1-1)^2 x2^2 + (x2^2-1)^2`` in its original sign."""
    x1, x2 = xi[..., 0], xi[..., 1]
    return (x1 - 1) ** 2 * x2 ** 2 + (x2 ** 2 - 1) ** 2


def abg_gradient(xi):
    x1, x2 = xi[..., 0], xi[..., 1]
    return _stack(2 * (x1 - 1) * x2 ** 2, 2 * (x1 - 1) ** 2 * x2 + 4 * x2 * (x2 ** 2 - 1))


def abg_hessian(xi):
    x1, x2 = xi[..., 0], xi[..., 1]
    return np.stack([_stack(2 * x2 ** 2, 4 * x2 * (x1 - 1)),
                     _stack(4 * x2 * (x1 - 1), 2 * (x1 - 1) ** 2 + 12 * x2 ** 2 - 4)], axis=-2)


def abg_potential() -> Potential:
    """Problem potential ``-W`` for the double well ``W`` above.

    The system ``-Delta u + grad W(u) = 0`` reads ``-Delta u = F_i`` with ``F = -W``.
    """
    return Potential(
        2,
        lambda x, xi: -abg_function(xi),
        lambda x, xi: -abg_gradient(xi),
        lambda x, xi: -abg_hessian(xi),
        label="abg",
    )


def quadratic_potential(Q) -> Potential:
    """``F = xi^T Q xi / 2`` (linear right-hand side ``F_i = (Q xi)_i``)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = Q.shape[0]
    return Potential(
        n,
        lambda x, xi: 0.5 * np.einsum("...i,ij,...j->...", xi, Q, xi),
        lambda x, xi: xi @ Q.T,
        lambda x, xi: np.broadcast_to(Q, np.shape(xi)[:-1] + Q.shape).copy(),
        label="quadratic",
        params={"Q": Q.tolist()},
    )


def constant_potential(n: int, c: float) -> Potential:
    """``F = c`` everywhere; used to exercise the sign audits."""
    c = float(c)
    return Potential(
        n,
        lambda x, xi: np.full(np.shape(xi)[:-1], c),
        lambda x, xi: np.zeros(np.shape(xi)),
        lambda x, xi: np.zeros(np.shape(xi) + (n,)),
        label="constant",
        params={"c": c},
    )


def zero_potential(n: int) -> Potential:
    return constant_potential(n, 0.0)


def modulated_potential(base: Potential, alpha: Callable) -> Potential:
    """``G(x, xi) = alpha(x) F(xi)``."""
    hc = None
    if base.hess_closed is not None:
        hc = lambda x, xi: alpha(x)[..., None, None] * base.hess_closed(x, xi)
    return Potential(
        base.n,
        lambda x, xi: alpha(x) * base.value(x, xi),
        lambda x, xi: alpha(x)[..., None] * base.grad(x, xi),
        hc,
        label=f"modulated {base.label}",
    )


@dataclass(frozen=True)
class Problem:
    coefficients: tuple
    potential: Potential
    grid: fl.Grid
    name: str = "problem"

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(self.coefficients))
        if self.n < 1:
            raise InputError("need at least one component")
        if self.potential.n != self.n:
            raise DimensionMismatchError(
                f"{self.n} coefficients but potential has {self.potential.n} components")

    @property
    def n(self) -> int:
        return len(self.coefficients)

    def x_nodes(self) -> np.ndarray:
        return self.grid.points()[..., : self.grid.m]


@dataclass(eq=False)
class SolutionTuple:
    """The n-tuple ``(u^1, ..., u^n)`` on a shared grid with cached gradients."""

    fields: list
    _grad_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.fields = list(self.fields)
        if len({f.grid for f in self.fields}) != 1:
            raise DimensionMismatchError("all components must share one grid")
        for f in self.fields:
            if not np.all(np.isfinite(f.values)):
                raise InputError("solution values must be finite")

    @property
    def grid(self) -> fl.Grid:
        return self.fields[0].grid

    @property
    def n(self) -> int:
        return len(self.fields)

    def __getitem__(self, i) -> fl.ScalarField:
        return self.fields[i]

    def __iter__(self):
        return iter(self.fields)

    @property
    def analytic(self) -> bool:
        return all(f.analytic is not None for f in self.fields)

    def stacked(self) -> np.ndarray:
        """Values stacked on a trailing component axis: ``grid.shape + (n,)``."""
        return np.stack([f.values for f in self.fields], axis=-1)

    def grad(self, i: int, mode: str = "fd") -> np.ndarray:
        key = ("g", i, mode)
        if key not in self._grad_cache:
            self._grad_cache[key] = fl.grad(self.fields[i], mode)
        return self._grad_cache[key]

    def hess(self, i: int, mode: str = "fd") -> np.ndarray:
        key = ("h", i, mode)
        if key not in self._grad_cache:
            self._grad_cache[key] = fl.hess(self.fields[i], mode)
        return self._grad_cache[key]

    def bounds(self, mode: str = "fd") -> dict:
        return {
            "max_abs_u": [float(np.max(np.abs(f.values))) for f in self.fields],
            "max_abs_grad": [float(np.max(np.linalg.norm(self.grad(i, mode), axis=-1))) for i in range(self.n)],
        }


def resolve_mode(sol: SolutionTuple, mode: str) -> str:
    if mode == "auto":
        return "analytic" if sol.analytic else "fd"
    return mode


def default_eps_grad(g: np.ndarray) -> float:
    gmax = float(np.max(np.linalg.norm(g, axis=-1))) if g.size else 0.0
    return 1e-8 * (1.0 + gmax)


# ---------------------------------------------------------------------------
# Linearized flux matrix
# ---------------------------------------------------------------------------

def assemble_A(coef: Coefficient, x, eta, eps_grad: float = 1e-12) -> np.ndarray:
    """``a(x,|eta|) I + da/dt(x,|eta|) eta eta^T / |eta|``, vectorized over leading axes."""
    eta = np.asarray(eta, dtype=float)
    t = np.linalg.norm(eta, axis=-1)
    if np.any(t < eps_grad):
        raise DegenerateGradientError(
            f"|eta| < eps_grad={eps_grad:g} at {int(np.sum(t < eps_grad))} point(s); mask them first")
    x = np.asarray(x, dtype=float)
    a = coef.value(x, t)
    da = coef.dt(x, t)
    N = eta.shape[-1]
    A = a[..., None, None] * np.eye(N) + (da / t)[..., None, None] * eta[..., :, None] * eta[..., None, :]
    return A


def A_quadratic(coef: Coefficient, x, eta, v) -> np.ndarray:
    """``<A(x, eta) v, v>`` without forming the matrix."""
    t = np.linalg.norm(eta, axis=-1)
    a = coef.value(x, t)
    da = coef.dt(x, t)
    return a * np.sum(v * v, axis=-1) + da / t * np.sum(eta * v, axis=-1) ** 2


def A_bilinear(coef: Coefficient, x, eta, v, w) -> np.ndarray:
    t = np.linalg.norm(eta, axis=-1)
    a = coef.value(x, t)
    da = coef.dt(x, t)
    return a * np.sum(v * w, axis=-1) + da / t * np.sum(eta * v, axis=-1) * np.sum(eta * w, axis=-1)


def largest_eigenvalue(A, tol: float = 1e-12) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    asym = np.max(np.abs(A - np.swapaxes(A, -1, -2)), initial=0.0)
    scale = max(1.0, float(np.max(np.abs(A), initial=0.0)))
    if asym > tol * scale:
        raise InputError(f"matrix not symmetric (max asymmetry {asym:.3g})")
    return np.linalg.eigvalsh(A)[..., -1]


def largest_eigenvalue_closed(coef: Coefficient, x, eta) -> np.ndarray:
    """``max(lambda1, lambda2)`` evaluated at ``t = |eta|``."""
    t = np.linalg.norm(np.asarray(eta, dtype=float), axis=-1)
    return np.maximum(coef.lambda1(x, t), coef.lambda2(x, t))


# ---------------------------------------------------------------------------
# Residuals and energy
# ---------------------------------------------------------------------------

def _as_values(psi, grid):
    out = []
    for p in psi:
        v = p.values if isinstance(p, fl.ScalarField) else np.asarray(p, dtype=float)
        if v.shape != grid.shape:
            raise DimensionMismatchError(f"test function shape {v.shape} != grid shape {grid.shape}")
        out.append(v)
    return out


def _psi_grads(psi, grid, mode):
    grads = []
    for p in psi:
        if isinstance(p, fl.ScalarField):
            m = mode if (mode == "analytic" and p.analytic is not None) else "fd"
            grads.append(fl.grad(p, m))
        else:
            grads.append(fl.grad(fl.ScalarField(grid, p), "fd"))
    return grads


def _simplex_grads(values: np.ndarray, grid: fl.Grid) -> np.ndarray:
    """Array-route P1 gradients raveled to ``(N!, cells, N)``."""
    g = fl.simplex_gradients(values, grid)
    return g.reshape(g.shape[0], -1, grid.N)


def _simplex_x(grid: fl.Grid) -> np.ndarray:
    xb = fl.simplex_barycenters(grid)[..., : grid.m]
    return xb.reshape(xb.shape[0], -1, grid.m)


def _safe_a(coef: Coefficient, x, t):
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        a = coef.value(x, np.maximum(t, 1e-300))
    return np.where(t > 0, a, 0.0)


def flux_divergence(coef: Coefficient, values: np.ndarray, grid: fl.Grid) -> np.ndarray:
    """Discrete ``-div(a(x,|grad u|) grad u)`` on nodes.

    Gradient of the piecewise-linear energy ``sum_T |T| Lambda2(|grad u_T|)``
    divided by the lumped nodal weights. Symmetric, with natural zero-flux
    behaviour on Neumann faces; the 2N+1-point Laplacian when ``a = 1``.
    """
    u = np.asarray(values, dtype=float).ravel()
    vol = fl.simplex_volume(grid)
    out = np.zeros(grid.size)
    for G, xb in fl.simplex_operators(grid):
        g = np.stack([Gj @ u for Gj in G], axis=-1)
        a = _safe_a(coef, xb, np.linalg.norm(g, axis=-1))
        flux = (vol * a)[:, None] * g
        for j, Gj in enumerate(G):
            out += Gj.T @ flux[:, j]
    out = out.reshape(grid.shape)
    w = grid.weights()
    out = np.where(w > 0, out / np.where(w > 0, w, 1.0), 0.0)
    return fl.fill_periodic(out, grid)


def strong_residual(problem: Problem, sol: SolutionTuple) -> list:
    """Node-wise ``-div(a_i grad u^i) - F_i``; zero on excluded (Dirichlet) nodes."""
    grid = problem.grid
    U = sol.stacked()
    Fi = problem.potential.grad(problem.x_nodes(), U)
    free = grid.free_mask()
    out = []
    for i, coef in enumerate(problem.coefficients):
        r = flux_divergence(coef, sol[i].values, grid) - Fi[..., i]
        r = fl.fill_periodic(np.where(free, r, 0.0), grid)
        out.append(r)
    return out


def residual_sup(problem: Problem, sol: SolutionTuple) -> float:
    return max(float(np.max(np.abs(r))) for r in strong_residual(problem, sol))


def _quadrature(mode: str, quadrature: str) -> str:
    if quadrature == "auto":
        return "nodal" if mode == "analytic" else "simplex"
    if quadrature not in ("simplex", "nodal"):
        raise InputError(f"unknown quadrature {quadrature!r}")
    if quadrature == "simplex" and mode == "analytic":
        raise InputError("simplex quadrature needs fd gradients")
    return quadrature


def weak_residual(problem: Problem, sol: SolutionTuple, psi, mode: str = "fd",
                  quadrature: str = "auto") -> np.ndarray:
    """``int <a_i grad u^i, grad psi^i> - int F_i psi^i`` per component.

    ``quadrature="simplex"`` (the fd default) uses the solver's
    piecewise-linear gradients, so it is the exact directional derivative of
    :func:`energy`; ``"nodal"`` uses nodal gradients with trapezoid weights.
    """
    grid = problem.grid
    mode = resolve_mode(sol, mode)
    quad = _quadrature(mode, quadrature)
    pv = _as_values(psi, grid)
    x = problem.x_nodes()
    Fi = problem.potential.grad(x, sol.stacked())
    w = grid.weights()
    res = np.zeros(problem.n)
    if quad == "simplex":
        vol, xb = fl.simplex_volume(grid), _simplex_x(grid)
        for i, coef in enumerate(problem.coefficients):
            g, gp = _simplex_grads(sol[i].values, grid), _simplex_grads(pv[i], grid)
            a = _safe_a(coef, xb, np.linalg.norm(g, axis=-1))
            res[i] = vol * np.sum(a * np.sum(g * gp, axis=-1)) - np.sum(w * Fi[..., i] * pv[i])
        return res
    pg = _psi_grads(psi, grid, mode)
    for i, coef in enumerate(problem.coefficients):
        g = sol.grad(i, mode)
        a = _safe_a(coef, x, np.linalg.norm(g, axis=-1))
        res[i] = np.sum(w * a * np.sum(g * pg[i], axis=-1)) - np.sum(w * Fi[..., i] * pv[i])
    return res


@dataclass
class DerivedResidual:
    direction: int
    residuals: np.ndarray
    degenerate_in_support: list


def derived_residual(problem: Problem, sol: SolutionTuple, j: int, psi, mode: str = "fd",
                     eps_grad: float | None = None) -> DerivedResidual:
    """Residual of the system satisfied by the y_j-derivatives of a solution.

    ``int <A^i grad u^i_{y_j}, grad psi^i> - sum_k int F_ik u^k_{y_j} psi^i``.
    ``j`` is 0-based among the y-directions.
    """
    grid = problem.grid
    if not 0 <= j < grid.dim_y:
        raise InputError(f"j must lie in [0, {grid.dim_y})")
    mode = resolve_mode(sol, mode)
    pv = _as_values(psi, grid)
    pg = _psi_grads(psi, grid, mode)
    x = problem.x_nodes()
    H = problem.potential.hess(x, sol.stacked())
    col = grid.m + j
    uy = np.stack([sol.grad(k, mode)[..., col] for k in range(problem.n)], axis=-1)
    w = grid.weights()
    res = np.zeros(problem.n)
    degenerate = []
    for i, coef in enumerate(problem.coefficients):
        g = sol.grad(i, mode)
        gy = np.linalg.norm(g[..., grid.m:], axis=-1)
        eps = default_eps_grad(g) if eps_grad is None else eps_grad
        t = np.linalg.norm(g, axis=-1)
        active = t > eps
        dgrad = sol.hess(i, mode)[..., :, col]
        form = np.zeros(grid.shape)
        form[active] = A_bilinear(coef, x[active], g[active], dgrad[active], pg[i][active])
        coupling = np.sum(H[..., i, :] * uy, axis=-1) * pv[i]
        res[i] = np.sum(w * form) - np.sum(w * coupling)
        degenerate.append(int(np.sum((gy <= eps) & (pv[i] != 0))))
    return DerivedResidual(j, res, degenerate)


def energy(problem: Problem, sol: SolutionTuple, region_mask=None, mode: str = "fd",
           quadrature: str = "auto") -> float:
    """``sum_i int Lambda2_i(x,|grad u^i|) - int F`` over the masked region.

    With simplex quadrature a node mask keeps the cells whose corners are
    all inside.
    """
    grid = problem.grid
    mode = resolve_mode(sol, mode)
    quad = _quadrature(mode, quadrature)
    x = problem.x_nodes()
    w = grid.weights()
    if region_mask is not None:
        w = w * region_mask
    total = -float(np.sum(w * problem.potential.value(x, sol.stacked())))
    for i, coef in enumerate(problem.coefficients):
        if quad == "simplex":
            cw = np.full(int(np.prod(fl.cell_shape(grid))), fl.simplex_volume(grid))
            if region_mask is not None:
                cw = cw * fl.cell_mask(grid, region_mask).ravel()
            t = np.linalg.norm(_simplex_grads(sol[i].values, grid), axis=-1)
            total += float(np.sum(cw * coef.Lambda2(_simplex_x(grid), t)))
        else:
            t = np.linalg.norm(sol.grad(i, mode), axis=-1)
            total += float(np.sum(w * coef.Lambda2(x, t)))
    return total


# ---------------------------------------------------------------------------
# Hypothesis audit for the minimizer route
# ---------------------------------------------------------------------------

@dataclass
class HypothesisCheck:
    name: str
    passed: bool
    value: float
    detail: str = ""
    violations: list = field(default_factory=list)


@dataclass
class MinimizerAudit:
    checks: list
    constants: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def by_name(self, name: str) -> HypothesisCheck:
        return next(c for c in self.checks if c.name == name)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "constants": self.constants,
            "checks": [
                {"name": c.name, "passed": bool(c.passed), "value": float(c.value), "detail": c.detail,
                 "violations": c.violations[:5]}
                for c in self.checks
            ],
        }


def minimizer_conditions_audit(problem: Problem, sample_spec: dict | None = None) -> MinimizerAudit:
    """Sampled check of the sufficient conditions for the energy-growth bound.

    ``sample_spec`` keys (all optional): ``x`` (array ``(k, m)``), ``t_max``,
    ``t_count``, ``xi_radius``, ``xi_count``, ``seed``, ``constant_cap``.
    Coefficient constants are the smallest values consistent with the
    samples; a condition fails when that constant is infinite or exceeds
    ``constant_cap``.
    """
    spec = dict(sample_spec or {})
    m, n = problem.grid.m, problem.n
    rng = np.random.default_rng(spec.get("seed", 0))
    xs = np.asarray(spec.get("x", rng.uniform(-5, 5, size=(8, m))), dtype=float).reshape(-1, m)
    t_max = float(spec.get("t_max", 10.0))
    tt = np.geomspace(1e-3, t_max, int(spec.get("t_count", 200)))
    cap = float(spec.get("constant_cap", 1e6))
    checks, consts = [], {}
    X, T = np.meshgrid(np.arange(len(xs)), tt, indexing="ij")
    XX = xs[X]
    for i, coef in enumerate(problem.coefficients):
        l1, l2, L2 = lambda_profiles(coef, XX, T)
        bad = ~(l1 > 0)
        checks.append(HypothesisCheck(f"lambda1-positive[{i}]", not bad.any(), float(np.nanmin(l1)),
                                      "lambda1 > 0", _violations(XX, T, bad)))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.maximum(l1, l2) * T ** 2 / L2
        # smallest C with ratio <= C on t in (0, C]
        C = np.inf
        for cand in np.unique(np.concatenate([[1.0], tt])):
            if cand < 1.0:
                continue
            sel = T <= cand
            rmax = np.nanmax(np.where(sel, ratio, -np.inf))
            if rmax <= cand:
                C = max(1.0, float(rmax))
                break
            if not np.isfinite(rmax):
                break
        if not np.isfinite(C):
            rmax_all = float(np.nanmax(ratio))
            if np.isfinite(rmax_all) and rmax_all <= t_max:
                C = rmax_all
        consts[f"C[{i}]"] = C
        checks.append(HypothesisCheck(f"quadratic-bound[{i}]", bool(np.isfinite(C) and C <= cap), C,
                                      "lambda1 t^2, lambda2 t^2 <= C Lambda2 on (0, C]"))
        checks.append(HypothesisCheck(f"Lambda2-nonnegative[{i}]", bool(np.all(L2 >= 0)), float(np.min(L2)), "Lambda2 >= 0",
                                      _violations(XX, T, L2 < 0)))
        ss = tt[::4]
        S, Tt = np.meshgrid(ss, ss, indexing="ij")
        sub_ratios = []
        for x0 in xs:
            with np.errstate(divide="ignore", invalid="ignore"):
                r = coef.Lambda2(x0, S + Tt) / (coef.Lambda2(x0, S) + coef.Lambda2(x0, Tt))
            sub_ratios.append(np.nanmax(r))
        Cbar = float(np.max(sub_ratios))
        consts[f"Cbar[{i}]"] = Cbar
        checks.append(HypothesisCheck(f"subadditive[{i}]", bool(np.isfinite(Cbar) and Cbar <= cap), Cbar,
                                      "Lambda2(s+t) <= Cbar (Lambda2(s) + Lambda2(t))"))
        # Lambda2(x, s) <= alpha(x) g(s) with alpha = 1, g = running sup over sampled x
        g_env = np.maximum.accumulate(np.max(L2, axis=0))
        ok = bool(np.all(np.isfinite(g_env)))
        checks.append(HypothesisCheck(f"envelope[{i}]", ok, float(g_env[-1]),
                                      "Lambda2 <= alpha(x) g(s), alpha = 1, g = monotone envelope"))
    # potential hypotheses
    R = float(spec.get("xi_radius", 3.0))
    k = int(spec.get("xi_count", 2000))
    xi = rng.uniform(-R, R, size=(k, n))
    xk = xs[rng.integers(0, len(xs), size=k)]
    Fv = problem.potential.value(xk, xi)
    checks.append(HypothesisCheck("F-nonpositive", bool(np.all(Fv <= 0)), float(np.max(Fv)), "F <= 0",
                                  [xi[j].tolist() for j in np.flatnonzero(Fv > 0)[:5]]))
    sph = rng.normal(size=(k, n))
    sph /= np.linalg.norm(sph, axis=-1, keepdims=True)
    Fs = problem.potential.value(xk, sph)
    smax = float(np.max(np.abs(Fs)))
    checks.append(HypothesisCheck("F-zero-on-sphere", smax <= 1e-12, smax, "F = 0 on the unit sphere (max |F| reported)",
                                  [sph[j].tolist() for j in np.argsort(-np.abs(Fs))[:5] if abs(Fs[j]) > 1e-12]))
    ball = sph * rng.uniform(0, 1, size=(k, 1)) ** (1.0 / n)
    bmax = float(np.max(np.abs(problem.potential.value(xk, ball))))
    checks.append(HypothesisCheck("F-bounded-on-ball", bool(np.isfinite(bmax)), bmax, "sup |F| over the unit ball finite"))
    return MinimizerAudit(checks, consts)


def _violations(X, T, bad):
    idx = np.argwhere(bad)[:5]
    return [{"x": np.atleast_1d(X[tuple(j)]).tolist(), "t": float(T[tuple(j)])} for j in idx]


# ---------------------------------------------------------------------------
# JSON problem documents
# ---------------------------------------------------------------------------

PROBLEM_SCHEMA = {
    "type": "object",
    "required": ["n", "coefficients", "potential", "grid"],
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "coefficients": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind"],
                "properties": {
                    "kind": {"enum": ["constant", "p-power", "x-modulated"]},
                    "params": {"type": "object"},
                },
            },
        },
        "potential": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["blwz", "allen-cahn", "coupled-double-well", "ginzburg-landau", "abg", "quadratic",
                                  "constant", "zero"]},
                "params": {"type": "object"},
            },
        },
        "grid": {
            "type": "object",
            "required": ["extents", "nodes", "m"],
            "properties": {
                "extents": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                                       "minItems": 2, "maxItems": 2}},
                "nodes": {"oneOf": [{"type": "integer"}, {"type": "array", "items": {"type": "integer"}}]},
                "m": {"type": "integer", "minimum": 1},
                "boundary": {"oneOf": [{"enum": list(fl.BOUNDARY_KINDS)},
                                       {"type": "array", "items": {"enum": list(fl.BOUNDARY_KINDS)}}]},
            },
        },
        "bc": {"type": "object"},
    },
}


def validate_document(doc, schema) -> None:
    """Raise :class:`ConfigError` with a JSON-pointer path on the first violation."""
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "/" + "/".join(str(p) for p in e.absolute_path)
        raise ConfigError(e.message, path)


def _coefficient_from_doc(d: dict) -> Coefficient:
    kind, params = d["kind"], d.get("params", {})
    if kind == "constant":
        return constant_coefficient(params.get("c", 1.0))
    if kind == "p-power":
        return p_power_coefficient(params["p"], params.get("scale", 1.0))
    amp, base = float(params.get("amplitude", 0.2)), float(params.get("base", 1.0))
    alpha = lambda x, amp=amp, base=base: base + amp * np.cos(np.asarray(x)[..., 0])
    return x_modulated_coefficient(params.get("p", 2.0), alpha)


def _potential_from_doc(d: dict, n: int) -> Potential:
    kind, params = d["kind"], d.get("params", {})
    if kind == "blwz":
        return blwz_potential()
    if kind == "allen-cahn":
        return allen_cahn_potential()
    if kind == "coupled-double-well":
        return coupled_double_well_potential(params.get("beta", 0.5))
    if kind == "ginzburg-landau":
        return ginzburg_landau_potential(n)
    if kind == "abg":
        return abg_potential()
    if kind == "quadratic":
        return quadratic_potential(params.get("Q", (-np.eye(n)).tolist()))
    if kind == "constant":
        return constant_potential(n, params.get("c", 0.0))
    return zero_potential(n)


def problem_from_dict(doc: dict) -> Problem:
    validate_document(doc, PROBLEM_SCHEMA)
    n = doc["n"]
    if len(doc["coefficients"]) != n:
        raise ConfigError(f"expected {n} coefficients, got {len(doc['coefficients'])}", "/coefficients")
    g = doc["grid"]
    try:
        grid = fl.make_grid(g["extents"], g["nodes"], g["m"], g.get("boundary"))
    except ValueError as exc:
        raise ConfigError(str(exc), "/grid") from exc
    pot = _potential_from_doc(doc["potential"], n)
    if pot.n != n:
        raise ConfigError(f"potential {doc['potential']['kind']!r} has {pot.n} components, n={n}", "/potential")
    return Problem([_coefficient_from_doc(c) for c in doc["coefficients"]], pot, grid,
                   name=doc.get("name", "problem"))


def load_problem(path) -> Problem:
    with open(path) as fh:
        return problem_from_dict(json.load(fh))

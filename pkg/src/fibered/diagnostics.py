"""
Audits over solution tuples: stability spectrum, monotonicity and sign
conditions, the Poincare-type inequality in two forms, growth and cutoff
scans, level-set symmetry and direction alignment, and the double-well
counterexample audit.

Every report exposes ``verdict`` and ``to_report(inputs)`` producing a
:class:`fibered.reports.Report`.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from . import fields as fl
from . import geometry as geo
from . import model as md
from . import solver as sv
from .errors import (DimensionMismatchError, DomainError, EigenSolverError, InputError,
                     SignHypothesisError, TruncationError)
from .reports import Report

logger = logging.getLogger(__name__)


def _psi_values(psi, grid):
    return md._as_values(psi, grid)


def _check_compact(psi_vals, grid, atol=0.0):
    free = grid.free_mask()
    dirichlet = np.zeros(grid.shape, dtype=bool)
    for k, kind in enumerate(grid.boundary):
        if kind == "dirichlet":
            idx = [slice(None)] * grid.N
            for end in (0, -1):
                idx[k] = end
                dirichlet[tuple(idx)] = True
    for p in psi_vals:
        if np.any(np.abs(p[dirichlet]) > atol):
            raise InputError("test tuple must vanish on Dirichlet faces")
    return free


def _hess_F(problem, sol):
    return problem.potential.hess(problem.x_nodes(), sol.stacked())


# ---------------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------------

def stability_quadratic(problem: md.Problem, sol: md.SolutionTuple, psi, t_floor: float = 1e-10) -> float:
    """Discrete second variation ``Q(psi)`` (array route).

    ``sum_i sum_T |T| <A^i grad psi^i, grad psi^i> - sum_ij sum_nodes w F_ij psi^i psi^j``
    with piecewise-linear gradients, the same form assembled by
    :func:`stability_matrices`.
    """
    grid = problem.grid
    if sol.grid != grid:
        raise DimensionMismatchError("solution and problem grids differ")
    pv = _psi_values(psi, grid)
    if len(pv) != problem.n:
        raise DimensionMismatchError(f"need {problem.n} test functions, got {len(pv)}")
    vol = fl.simplex_volume(grid)
    xb = md._simplex_x(grid)
    total = 0.0
    for i, coef in enumerate(problem.coefficients):
        g = md._simplex_grads(sol[i].values, grid)
        gp = md._simplex_grads(pv[i], grid)
        t = np.maximum(np.linalg.norm(g, axis=-1), t_floor)
        with np.errstate(over="ignore"):
            a = coef.value(xb, t)
            da = coef.dt(xb, t)
        total += vol * float(np.sum(a * np.sum(gp * gp, axis=-1) + da / t * np.sum(g * gp, axis=-1) ** 2))
    H = _hess_F(problem, sol)
    P = np.stack(pv, axis=-1)
    total -= float(np.sum(grid.weights() * np.einsum("...i,...ij,...j->...", P, H, P)))
    return total


def stability_matrices(problem: md.Problem, sol: md.SolutionTuple):
    """``(K, M, free)``: stiffness-minus-coupling and lumped mass on free nodes, block by component."""
    grid = problem.grid
    free = grid.free_mask()
    K = sv.system_jacobian(problem, sol, free, linearized=True, weighted=True)
    K = 0.5 * (K + K.T)
    w = grid.weights()[free]
    M = sp.diags(np.tile(w, problem.n)).tocsc()
    return K.tocsc(), M, free


def tol_stab(problem: md.Problem, sol: md.SolutionTuple) -> float:
    """``10 h^2 max |F_ij|`` over nodes."""
    H = _hess_F(problem, sol)
    return 10 * problem.grid.h_max ** 2 * float(np.max(np.abs(H), initial=0.0))


@dataclass
class StabilityReport:
    lambda_min: float
    eigenvector: list
    quadratic_value: float
    mass_norm_sq: float
    tol: float
    method: str
    h: float
    dofs: int
    history: list = field(default_factory=list)

    @property
    def stable(self) -> bool:
        return self.lambda_min >= -self.tol

    @property
    def verdict(self) -> str:
        return "pass" if self.stable else "fail"

    def to_report(self, inputs=None, name="stability") -> Report:
        return Report(name, inputs or {}, {
            "lambda_min": self.lambda_min,
            "quadratic_value": self.quadratic_value,
            "mass_norm_sq": self.mass_norm_sq,
            "method": self.method,
            "h": self.h,
            "dofs": self.dofs,
        }, self.verdict, {"tol_stab": self.tol})


def stability_lambda_min(problem: md.Problem, sol: md.SolutionTuple, tol: float | None = None) -> StabilityReport:
    """Smallest generalized eigenvalue of ``K psi = lambda M psi`` on free nodes.

    Shift-invert Lanczos with the shift below the Gershgorin bound of the
    coupling term (the stiffness part is positive semidefinite), with LOBPCG
    as a fallback.
    """
    grid = problem.grid
    K, M, free = stability_matrices(problem, sol)
    H = _hess_F(problem, sol)
    bound = float(np.max(np.sum(np.abs(H), axis=-1), initial=0.0))
    sigma = -bound - 1.0
    history = []
    method = "shift-invert"
    try:
        # fixed start vector: ARPACK's default is random, which breaks report digests
        v0 = np.random.default_rng(0).uniform(0.5, 1.5, size=K.shape[0])
        vals, vecs = spla.eigsh(K, k=1, M=M, sigma=sigma, which="LM", tol=1e-12, v0=v0)
        lam, vec = float(vals[0]), vecs[:, 0]
        history.append({"method": method, "sigma": sigma, "lambda": lam})
    except (spla.ArpackNoConvergence, RuntimeError) as exc:
        history.append({"method": method, "error": str(exc)})
        method = "lobpcg"
        rng = np.random.default_rng(0)
        X = rng.normal(size=(K.shape[0], 1))
        Kshift = (K - sigma * M).tocsc()
        lu = spla.splu(Kshift)
        prec = spla.LinearOperator(K.shape, matvec=lu.solve)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vals, vecs, res = spla.lobpcg(K, X, B=M, M=prec, largest=False, tol=1e-10, maxiter=500,
                                          retResidualNormsHistory=True)
        history.append({"method": method, "residuals": [float(np.max(r)) for r in res]})
        if not np.isfinite(vals[0]) or (res and float(np.max(res[-1])) > 1e-6):
            raise EigenSolverError("eigen-iteration did not converge", history)
        lam, vec = float(vals[0]), vecs[:, 0]
    mnorm = float(vec @ (M @ vec))
    vec = vec / np.sqrt(mnorm)
    nf = int(free.sum())
    psi = []
    for i in range(problem.n):
        v = np.zeros(grid.shape)
        v[free] = vec[i * nf:(i + 1) * nf]
        psi.append(fl.fill_periodic(v, grid))
    qv = stability_quadratic(problem, sol, psi)
    mn = float(sum(np.sum(grid.weights() * p ** 2) for p in psi))
    if tol is None:
        tol = tol_stab(problem, sol)
    return StabilityReport(lam, psi, qv, mn, float(tol), method, grid.h_max, K.shape[0], history)


# ---------------------------------------------------------------------------
# Monotonicity and sign hypotheses
# ---------------------------------------------------------------------------

@dataclass
class MonotonicityReport:
    component_min_abs: list
    component_sign: list
    pair_min: dict
    eps_mono: float
    tol: float

    @property
    def passed(self) -> bool:
        comps = all(m > self.eps_mono and s != 0 for m, s in zip(self.component_min_abs, self.component_sign))
        return comps and all(v >= -self.tol for v in self.pair_min.values())

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_report(self, inputs=None, name="monotonicity") -> Report:
        return Report(name, inputs or {}, {
            "component_min_abs": self.component_min_abs,
            "component_sign": self.component_sign,
            "pair_min": {f"{i},{j}": v for (i, j), v in self.pair_min.items()},
        }, self.verdict, {"eps_mono": self.eps_mono, "tol": self.tol})


def check_F_monotone(problem: md.Problem, sol: md.SolutionTuple, eps_mono: float | None = None,
                     tol: float | None = None, mode: str = "auto", region=None) -> MonotonicityReport:
    """Strict monotonicity in the last y-direction plus the coupling sign pattern.

    ``eps_mono`` defaults to ``1e-8 max |grad u|``; a component whose
    derivative takes both signs gets sign 0 and fails.
    """
    mode = md.resolve_mode(sol, mode)
    grid = problem.grid
    region = np.ones(grid.shape, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    d = [sol.grad(i, mode)[..., -1][region] for i in range(problem.n)]
    gmax = max(float(np.max(np.linalg.norm(sol.grad(i, mode), axis=-1))) for i in range(problem.n))
    eps = 1e-8 * gmax if eps_mono is None else float(eps_mono)
    mins = [float(np.min(np.abs(di))) for di in d]
    signs = []
    for di in d:
        if np.all(di > 0):
            signs.append(1)
        elif np.all(di < 0):
            signs.append(-1)
        else:
            signs.append(0)
    H = _hess_F(problem, sol)[region]
    pairs = {}
    scale = 0.0
    for i, j in itertools.combinations(range(problem.n), 2):
        prod = H[:, i, j] * d[i] * d[j]
        pairs[(i, j)] = float(np.min(prod))
        scale = max(scale, float(np.max(np.abs(prod))))
    if tol is None:
        tol = 1e-10 * max(1.0, scale)
    return MonotonicityReport(mins, signs, pairs, eps, float(tol))


@dataclass
class SignHypothesisReport:
    pair_min: dict
    witness: dict
    tol: float

    @property
    def passed(self) -> bool:
        return all(v >= -self.tol for v in self.pair_min.values())

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_report(self, inputs=None, name="sign-hypothesis") -> Report:
        return Report(name, inputs or {}, {
            "pair_min": {f"{i},{j}": v for (i, j), v in self.pair_min.items()},
            "witness": {f"{i},{j}": v for (i, j), v in self.witness.items()},
        }, self.verdict, {"tol": self.tol})


def check_sign_hypothesis(problem: md.Problem, sol: md.SolutionTuple, theta, tol: float = 1e-12,
                          region=None) -> SignHypothesisReport:
    """``min F_ij theta^i theta^j`` over nodes for ``i < j``.

    Each ``theta^i`` must have one strict sign on the region; otherwise
    :class:`SignHypothesisError` is raised.
    """
    grid = problem.grid
    region = np.ones(grid.shape, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    th = []
    for i, t in enumerate(theta):
        v = t.values if isinstance(t, fl.ScalarField) else np.broadcast_to(np.asarray(t, dtype=float), grid.shape)
        v = v[region]
        if not (np.all(v > 0) or np.all(v < 0)):
            raise SignHypothesisError(f"theta^{i} is not of one strict sign on the region")
        th.append(v)
    if len(th) != problem.n:
        raise DimensionMismatchError(f"need {problem.n} sign fields, got {len(th)}")
    H = _hess_F(problem, sol)[region]
    pts = grid.points()[region]
    pairs, witness = {}, {}
    for i, j in itertools.combinations(range(problem.n), 2):
        prod = H[:, i, j] * th[i] * th[j]
        k = int(np.argmin(prod))
        pairs[(i, j)] = float(prod[k])
        witness[(i, j)] = {"node": pts[k].tolist(), "F_ij": float(H[k, i, j]),
                           "values": [float(sol[c].values[region][k]) for c in range(problem.n)]}
    return SignHypothesisReport(pairs, witness, float(tol))


# ---------------------------------------------------------------------------
# Poincare-type inequality
# ---------------------------------------------------------------------------

def random_bump(rng: np.random.Generator, grid: fl.Grid, margin: float = 0.1) -> fl.AnalyticField:
    """Smooth compactly supported test function ``(1 - |X-c|^2/r^2)_+^3 (b + <a, X-c>)``."""
    lo = np.array([e[0] for e in grid.extents])
    hi = np.array([e[1] for e in grid.extents])
    span = hi - lo
    r = rng.uniform(0.15, 0.4) * float(np.min(span))
    inner_lo = lo + margin * span + r
    inner_hi = hi - margin * span - r
    c = np.where(inner_hi > inner_lo, rng.uniform(inner_lo, np.maximum(inner_hi, inner_lo + 1e-12)), 0.5 * (lo + hi))
    a = rng.normal(size=grid.N) / r
    b = rng.normal()

    def parts(X):
        d = X - c
        s = np.sum(d * d, axis=-1) / r ** 2
        inside = s < 1
        f = np.where(inside, (1 - s), 0.0)
        lin = b + d @ a
        return d, f, lin, inside

    def value(X):
        d, f, lin, _ = parts(X)
        return f ** 3 * lin

    def gradient(X):
        d, f, lin, _ = parts(X)
        return (-6 * f ** 2 / r ** 2 * lin)[..., None] * d + (f ** 3)[..., None] * a

    def hessian(X):
        d, f, lin, _ = parts(X)
        N = X.shape[-1]
        I = np.eye(N)
        H = (24 * f / r ** 4 * lin)[..., None, None] * d[..., :, None] * d[..., None, :]
        H = H - (6 * f ** 2 / r ** 2 * lin)[..., None, None] * I
        cross = (-6 * f ** 2 / r ** 2)[..., None, None] * (d[..., :, None] * a[None, :] + a[:, None] * d[..., None, :])
        return H + cross

    return fl.AnalyticField(value, gradient, hessian)


def random_test_tuple(rng: np.random.Generator, grid: fl.Grid, n: int) -> list:
    return [fl.sample(random_bump(rng, grid), grid) for _ in range(n)]


@dataclass
class PoincareReport:
    lhs: list
    cross: float
    rhs: list
    gap: float
    tol: float
    form: str
    stable: bool | None = None
    lhs_other_form: list | None = None
    form_difference: float | None = None
    min_integrand: float | None = None

    @property
    def verdict(self) -> str:
        if self.gap >= -self.tol:
            return "pass"
        return "hypothesis-not-met" if self.stable is False else "fail"

    def to_report(self, inputs=None, name="poincare") -> Report:
        return Report(name, inputs or {}, {
            "lhs": self.lhs, "cross": self.cross, "rhs": self.rhs, "gap": self.gap, "form": self.form,
            "stable": self.stable, "lhs_other_form": self.lhs_other_form,
            "form_difference": self.form_difference, "min_integrand": self.min_integrand,
        }, self.verdict, {"tol_pq": self.tol})


def _poincare_common(problem, sol, psi, mode):
    grid = problem.grid
    mode = md.resolve_mode(sol, mode)
    pv = _psi_values(psi, grid)
    pg = md._psi_grads(psi, grid, mode)
    x = problem.x_nodes()
    w = grid.weights()
    m = grid.m
    gys = [sol.grad(k, mode)[..., m:] for k in range(problem.n)]
    nys = [np.linalg.norm(gy, axis=-1) for gy in gys]
    H = _hess_F(problem, sol)
    cross = 0.0
    for k in range(problem.n):
        for j in range(problem.n):
            if j == k:
                continue
            integrand = H[..., k, j] * (pv[k] ** 2 * np.sum(gys[j] * gys[k], axis=-1) - pv[j] * pv[k] * nys[k] * nys[j])
            cross += float(np.sum(w * integrand))
    rhs = []
    for k, coef in enumerate(problem.coefficients):
        g = sol.grad(k, mode)
        t = np.maximum(np.linalg.norm(g, axis=-1), 1e-300)
        with np.errstate(over="ignore", invalid="ignore"):
            a = coef.value(x, t)
            da = np.where(np.linalg.norm(g, axis=-1) > 0, coef.dt(x, t), 0.0)
        quad = a * np.sum(pg[k] ** 2, axis=-1) + da / t * np.sum(g * pg[k], axis=-1) ** 2
        rhs.append(float(np.sum(w * np.nan_to_num(quad) * nys[k] ** 2)))
    return mode, pv, x, w, cross, rhs


def _a_form_integrand(coef, x, g, H, m, mask):
    """``sum_j <A grad u_{y_j}, grad u_{y_j}> - <A q, q>`` with ``q = H[:, y] nu``."""
    out = np.zeros(mask.shape)
    gm, Hm = g[mask], H[mask]
    ny = np.linalg.norm(gm[:, m:], axis=-1)
    q = np.einsum("nab,nb->na", Hm[:, :, m:], gm[:, m:] / ny[:, None])
    A = md.assemble_A(coef, x[mask], gm)
    Hy = Hm[:, :, m:]
    out[mask] = np.einsum("naj,nab,nbj->n", Hy, A, Hy) - np.einsum("na,nab,nb->n", q, A, q)
    return out


def _problem_scale(lhs, rhs, cross):
    return max(1.0, abs(cross), *[abs(v) for v in lhs], *[abs(v) for v in rhs])


def poincare_gap(problem: md.Problem, sol: md.SolutionTuple, psi, mode: str = "auto", stable: bool | None = None,
                 eps_grad: float | None = None, tol: float | None = None) -> PoincareReport:
    """Signed gap ``RHS + cross - LHS`` of the inequality in its flux-matrix form.

    ``cross = sum_{k != j} int F_kj ((psi^k)^2 <grad_y u^j, grad_y u^k> - psi^j psi^k |grad_y u^k||grad_y u^j|)``.
    ``q = grad |grad_y u|`` uses the quotient ``H[:, y] nu`` on the active set.
    Default ``tol = 10 h^2`` times the largest term magnitude.
    """
    mode, pv, x, w, cross, rhs = _poincare_common(problem, sol, psi, mode)
    grid = problem.grid
    lhs = []
    mins = []
    for k, coef in enumerate(problem.coefficients):
        g = sol.grad(k, mode)
        act = geo.active_region(sol[k], eps_grad, mode)
        integ = _a_form_integrand(coef, x, g, sol.hess(k, mode), grid.m, act.mask)
        lhs.append(float(np.sum(w * integ * pv[k] ** 2)))
        if act.mask.any():
            mins.append(float(np.min(integ[act.mask])))
    scale = _problem_scale(lhs, rhs, cross)
    if tol is None:
        tol = 10 * grid.h_max ** 2 * scale
    gap = sum(rhs) + cross - sum(lhs)
    return PoincareReport(lhs, cross, rhs, gap, float(tol), "flux-matrix", stable,
                          min_integrand=min(mins) if mins else None)


def poincare_geometric_form(problem: md.Problem, sol: md.SolutionTuple, psi, mode: str = "auto",
                            stable: bool | None = None, eps_grad: float | None = None,
                            tol: float | None = None) -> PoincareReport:
    """Gap with the left side written through S, K, the tangential term and T.

    Also evaluates the flux-matrix left side on the same bundle and reports
    the difference of the two forms.
    """
    mode, pv, x, w, cross, rhs = _poincare_common(problem, sol, psi, mode)
    grid = problem.grid
    m = grid.m
    lhs, lhs_A = [], []
    for k, coef in enumerate(problem.coefficients):
        b = geo.compute_STU(sol[k], mode, eps_grad)
        mk = b.active.mask
        integ = np.zeros(grid.shape)
        gm = b.grad[mk]
        t = np.linalg.norm(gm, axis=-1)
        ny = b.grad_y_norm[mk]
        tq = b.tangential_q()[mk]
        a = coef.value(x[mk], t)
        da = coef.dt(x[mk], t)
        integ[mk] = a * (b.S[mk] + b.K[mk] ** 2 * ny ** 2 + np.sum(tq ** 2, axis=-1)) + da / t * b.T[mk]
        lhs.append(float(np.sum(w * integ * pv[k] ** 2)))
        A = md.assemble_A(coef, x[mk], gm)
        Hy = b.hess[mk][:, :, m:]
        q = b.q[mk]
        integ_A = np.zeros(grid.shape)
        integ_A[mk] = np.einsum("naj,nab,nbj->n", Hy, A, Hy) - np.einsum("na,nab,nb->n", q, A, q)
        lhs_A.append(float(np.sum(w * integ_A * pv[k] ** 2)))
    scale = _problem_scale(lhs, rhs, cross)
    if tol is None:
        tol = 10 * grid.h_max ** 2 * scale
    gap = sum(rhs) + cross - sum(lhs)
    diff = max(abs(p - q) for p, q in zip(lhs, lhs_A))
    return PoincareReport(lhs, cross, rhs, gap, float(tol), "geometric", stable, lhs_A, float(diff))


# ---------------------------------------------------------------------------
# Logarithmic cutoff, growth and decay scans
# ---------------------------------------------------------------------------

def log_cutoff_analytic(R: float, center=None) -> fl.AnalyticField:
    """``1`` on ``B_sqrt(R)``, ``2 (log R - log|X|)/log R`` on the annulus, ``0`` outside ``B_R``."""
    if not R > 1:
        raise DomainError(f"cutoff radius must exceed 1, got {R}")
    L = np.log(R)
    r0 = np.sqrt(R)

    def rel(X):
        return X if center is None else X - np.asarray(center, dtype=float)

    def value(X):
        r = np.linalg.norm(rel(X), axis=-1)
        with np.errstate(divide="ignore"):
            mid = 2 * (L - np.log(np.maximum(r, 1e-300))) / L
        return np.where(r <= r0, 1.0, np.where(r >= R, 0.0, mid))

    def gradient(X):
        Y = rel(X)
        r = np.linalg.norm(Y, axis=-1)
        ann = (r > r0) & (r < R)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = -2 * Y / (np.where(ann, r, 1.0) ** 2 * L)[..., None]
        return np.where(ann[..., None], g, 0.0)

    def hessian(X):
        Y = rel(X)
        N = Y.shape[-1]
        r = np.where(np.linalg.norm(Y, axis=-1) > 0, np.linalg.norm(Y, axis=-1), 1.0)
        ann = (r > r0) & (r < R)
        H = -2 / L * (np.eye(N) / r[..., None, None] ** 2 - 2 * Y[..., :, None] * Y[..., None, :] / r[..., None, None] ** 4)
        return np.where(ann[..., None, None], H, 0.0)

    return fl.AnalyticField(value, gradient, hessian)


@dataclass
class CutoffResult:
    fields: list
    R: float
    contained: bool
    max_ratio: float
    unit_bound_holds: bool
    notes: list = field(default_factory=list)


def log_cutoff(R: float, grid: fl.Grid, signs, center=None) -> CutoffResult:
    """Signed cutoffs ``sign_i eta_R`` on ``grid``.

    Reports ``max |grad eta_R| 2 |X| log R`` over annulus nodes. The exact
    gradient magnitude on the annulus is ``2/(|X| log R)``, so the ratio is 4.
    """
    signs = [int(s) for s in signs]
    if any(s not in (-1, 1) for s in signs):
        raise InputError("signs must be +1 or -1")
    eta = log_cutoff_analytic(R, center)
    base = fl.sample(eta, grid)
    contained = grid.contains_ball(R, center)
    notes = [] if contained else ["grid does not contain B_R; the cutoff is restricted to the box"]
    X = grid.points() if center is None else grid.points() - np.asarray(center, dtype=float)
    r = np.linalg.norm(X, axis=-1)
    ann = (r > np.sqrt(R)) & (r < R)
    if ann.any():
        gn = np.linalg.norm(eta.gradient(grid.points()), axis=-1)[ann]
        ratio = float(np.max(gn * 2 * r[ann] * np.log(R)))
    else:
        ratio = float("nan")
        notes.append("no grid node lies in the annulus")
    out = [fl.ScalarField(grid, s * base.values, eta if s == 1 else eta.scaled(-1.0)) for s in signs]
    return CutoffResult(out, float(R), contained, ratio, bool(ratio <= 1 + 1e-12), notes)


def _Abar_grad_sq(problem, sol, k, mode, y_only=False):
    g = sol.grad(k, mode)
    x = problem.x_nodes()
    Ab = md.largest_eigenvalue_closed(problem.coefficients[k], x, g)
    gg = g[..., problem.grid.m:] if y_only else g
    return np.nan_to_num(Ab) * np.sum(gg ** 2, axis=-1)


def annulus_lemma_discrete(h: np.ndarray, r: np.ndarray, w: np.ndarray, R: float) -> dict:
    """Both sides of the annulus lemma for the node measure ``sum w h delta_X``.

    ``xi(t) = 2 sum_{|X|<t} w h`` is a step function, so the radial integral
    on the right is evaluated exactly.
    """
    r0 = np.sqrt(R)
    ann = (r >= r0) & (r < R)
    lhs = float(np.sum(w[ann] * h[ann] / r[ann] ** 2))
    inside = r < R
    lower = np.maximum(r[inside], r0)
    integral = float(np.sum(2 * w[inside] * h[inside] * 0.5 * (lower ** -2.0 - R ** -2.0)))
    xiR = 2 * float(np.sum(w[inside] * h[inside]))
    rhs = integral + xiR / R ** 2
    return {"R": R, "lhs": lhs, "rhs": rhs, "margin": rhs - lhs, "holds": bool(lhs <= rhs * (1 + 1e-12) + 1e-300)}


def _ring(f, rho: float, arc: float = 0.2) -> float:
    """``int_0^{2 pi} f(rho, theta) d theta`` by the periodic trapezoid rule.

    The node count keeps the arc spacing below ``arc`` so that features of
    unit width stay resolved at large radii.
    """
    n = int(min(max(256, np.ceil(2 * np.pi * rho / arc)), 2 ** 22))
    th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return float(np.sum(f(rho, th)) * 2 * np.pi / n)


def _radial_gl(g, a: float, b: float, panels: int = 4, order: int = 16) -> float:
    """Composite Gauss-Legendre on ``[a, b]``."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        total += half * sum(wk * g(mid + half * xk) for xk, wk in zip(x, w))
    return total


def annulus_lemma_polar(h_polar, R: float, arc: float = 0.2) -> dict:
    """Annulus lemma in R^2 by polar quadrature; ``h_polar(rho, theta)`` vectorized in theta.

    With ``xi(t) = 2 int_{B_t} h`` the right side is rewritten by Fubini as
    ``int_0^R ring(rho) rho (max(rho, sqrt R)^-2 - R^-2) d rho + xi(R)/R^2``.
    """
    r0 = np.sqrt(R)
    lhs = _radial_gl(lambda s: _ring(h_polar, np.exp(s), arc), 0.5 * np.log(R), np.log(R))
    inner = _radial_gl(lambda rho: _ring(h_polar, rho, arc) * rho * (r0 ** -2.0 - R ** -2.0), 0.0, r0)
    outer = _radial_gl(lambda s: _ring(h_polar, np.exp(s), arc) * (1.0 - np.exp(2 * s) / R ** 2),
                       0.5 * np.log(R), np.log(R))
    xiR = 2 * (_radial_gl(lambda rho: _ring(h_polar, rho, arc) * rho, 0.0, 1.0)
               + _radial_gl(lambda s: _ring(h_polar, np.exp(s), arc) * np.exp(2 * s), 0.0, np.log(R), panels=8))
    rhs = inner + outer + xiR / R ** 2
    return {"R": R, "lhs": lhs, "rhs": rhs, "margin": rhs - lhs, "holds": bool(lhs <= rhs * (1 + 1e-12))}


def polar_density(fields_, coefficients, m: int = 1, y_only: bool = False):
    """``h(rho, theta) = sum_k Abar_k |grad u^k|^2`` (or its y-part) for closed-form fields in R^2."""
    def h(rho, th):
        X = np.stack(np.broadcast_arrays(rho * np.cos(th), rho * np.sin(th)), axis=-1)
        tot = 0.0
        for f, coef in zip(fields_, coefficients):
            g = f.gradient(X)
            Ab = md.largest_eigenvalue_closed(coef, X[..., :m], g)
            gg = g[..., m:] if y_only else g
            tot = tot + Ab * np.sum(gg ** 2, axis=-1)
        return tot

    return h


@dataclass
class GrowthReport:
    radii: list
    xi: list
    exponent: list
    xi_over_R2: list
    lemma: list
    monotone: bool
    notes: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        ok = self.monotone and all(row["holds"] for comp in self.lemma for row in comp)
        return "pass" if ok else "fail"

    def rows(self) -> list:
        out = []
        for k, xs in enumerate(self.xi):
            for R, v, q in zip(self.radii, xs, self.xi_over_R2[k]):
                out.append({"component": k, "R": R, "xi": v, "xi_over_R2": q})
        return out

    def to_report(self, inputs=None, name="growth") -> Report:
        return Report(name, inputs or {}, {
            "radii": self.radii, "xi": self.xi, "exponent": self.exponent,
            "xi_over_R2": self.xi_over_R2, "lemma": self.lemma, "monotone": self.monotone, "notes": self.notes,
        }, self.verdict, {}, self.rows())


def _fit_loglog(R, v):
    R, v = np.asarray(R, dtype=float), np.asarray(v, dtype=float)
    ok = (v > 0) & (R > 0)
    if ok.sum() < 2:
        return float("nan"), float("nan"), int((~ok).sum())
    A = np.vstack([np.log(R[ok]), np.ones(ok.sum())]).T
    slope, icpt = np.linalg.lstsq(A, np.log(v[ok]), rcond=None)[0]
    return float(slope), float(np.exp(icpt)), int((~ok).sum())


def growth_check(problem: md.Problem, sol: md.SolutionTuple, radii, mode: str = "auto", center=None) -> GrowthReport:
    """Energy-growth table ``xi_i(R) = int_{B_R} Abar |grad u^i|^2`` and the annulus lemma per radius."""
    mode = md.resolve_mode(sol, mode)
    grid = problem.grid
    radii = [float(R) for R in radii]
    for R in radii:
        if not grid.contains_ball(R, center):
            raise TruncationError(f"ball of radius {R} leaves the grid box")
    r = grid.radius(center)
    w = grid.weights()
    xis, exps, ratios, lemma = [], [], [], []
    for k in range(problem.n):
        h = _Abar_grad_sq(problem, sol, k, mode)
        xs = [float(np.sum(w[r < R] * h[r < R])) for R in radii]
        xis.append(xs)
        exps.append(_fit_loglog(radii, xs)[0])
        ratios.append([v / R ** 2 for v, R in zip(xs, radii)])
        lemma.append([annulus_lemma_discrete(h.ravel(), r.ravel(), w.ravel(), R) for R in radii if R > 1])
    mono = all(np.all(np.diff(xs) >= -1e-12 * (1 + abs(xs[-1]))) for xs in xis)
    return GrowthReport(radii, xis, exps, ratios, lemma, bool(mono))


@dataclass
class DecayScan:
    R: list
    value: list
    value_log_R: list
    excluded: list
    method: str

    @property
    def spread(self) -> float:
        v = np.abs(np.asarray(self.value_log_R, dtype=float))
        if v.size == 0 or np.all(v == 0):
            return 1.0
        if np.any(v == 0):
            return float("inf")
        return float(np.max(v) / np.min(v))

    def bounded(self, factor: float = 2.0) -> bool:
        return self.spread <= factor

    @property
    def verdict(self) -> str:
        return "pass" if self.bounded() else "fail"

    def rows(self) -> list:
        return [{"R": R, "value": v, "value_log_R": vl} for R, v, vl in zip(self.R, self.value, self.value_log_R)]

    def to_report(self, inputs=None, name="cutoff-decay") -> Report:
        return Report(name, inputs or {}, {"spread": self.spread, "excluded": self.excluded, "method": self.method},
                      self.verdict, {"factor": 2.0}, self.rows())


def _valid_R(R_list):
    keep, drop = [], []
    for R in R_list:
        (keep if R > np.e else drop).append(float(R))
    if drop:
        warnings.warn(f"radii <= e excluded from the decay scan: {drop}", stacklevel=3)
    return keep, drop


def cutoff_decay_scan(problem: md.Problem, sol: md.SolutionTuple, R_list, mode: str = "auto",
                      center=None) -> DecayScan:
    """Grid quadrature of ``(1/(4 log^2 R)) sum_k int_{B_R - B_sqrt R} Abar |grad_y u^k|^2 / |X|^2``."""
    mode = md.resolve_mode(sol, mode)
    grid = problem.grid
    keep, drop = _valid_R(R_list)
    r = grid.radius(center)
    w = grid.weights()
    dens = sum(_Abar_grad_sq(problem, sol, k, mode, y_only=True) for k in range(problem.n))
    vals = []
    for R in keep:
        if not grid.contains_ball(R, center):
            raise TruncationError(f"ball of radius {R} leaves the grid box")
        ann = (r >= np.sqrt(R)) & (r < R)
        vals.append(float(np.sum(w[ann] * dens[ann] / r[ann] ** 2)) / (4 * np.log(R) ** 2))
    return DecayScan(keep, vals, [v * np.log(R) for v, R in zip(vals, keep)], drop, "grid")


def cutoff_decay_polar(fields_, coefficients, R_list, m: int = 1, arc: float = 0.2) -> DecayScan:
    """Polar-quadrature version in R^2 for closed-form fields (no grid).

    The radial integral runs in ``s = log rho`` (``d rho / rho = d s``).
    """
    keep, drop = _valid_R(R_list)
    dens = polar_density(fields_, coefficients, m, y_only=True)
    vals = []
    for R in keep:
        I = _radial_gl(lambda s: _ring(dens, np.exp(s), arc), 0.5 * np.log(R), np.log(R))
        vals.append(I / (4 * np.log(R) ** 2))
    return DecayScan(keep, vals, [v * np.log(R) for v, R in zip(vals, keep)], drop, "polar")


# ---------------------------------------------------------------------------
# Symmetry and direction alignment
# ---------------------------------------------------------------------------

def _angle(u, v):
    """Angle between unit vectors, accurate near 0 and pi."""
    return 2 * np.arctan2(np.linalg.norm(u - v, axis=-1), np.linalg.norm(u + v, axis=-1))


@dataclass
class ComponentSymmetry:
    sup_K: float
    sup_tangential: float
    n_regions: int
    max_angular_deviation: float
    trace_spread: float
    active_fraction: float
    directions: list


@dataclass
class SymmetryReport:
    components: list
    angle_tol: float
    K_tol: float
    notes: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        if not self.components:
            return "skipped"
        ok = all(c.max_angular_deviation <= self.angle_tol and c.sup_K <= self.K_tol for c in self.components)
        return "pass" if ok else "fail"

    def to_report(self, inputs=None, name="symmetry") -> Report:
        return Report(name, inputs or {}, {"components": self.components, "notes": self.notes},
                      self.verdict, {"angle_tol": self.angle_tol, "K_tol": self.K_tol})


def _default_angle_tol(mode, grid):
    return 1e-10 if mode == "analytic" else min(10 * grid.h_max, 0.1)


def _slice_regions(mask, m):
    """Label connected components of each x-slice of the mask; returns a label array and count."""
    lab = np.zeros(mask.shape, dtype=int)
    count = 0
    x_shape = mask.shape[:m]
    for xi in np.ndindex(*x_shape):
        l, n = ndimage.label(mask[xi], structure=np.ones((3,) * (mask.ndim - m)))
        lab[xi] = np.where(l > 0, l + count, 0)
        count += n
    return lab, count


def symmetry_residual(sol: md.SolutionTuple, problem: md.Problem | None = None, mode: str = "auto",
                      eps_grad: float | None = None, angle_tol: float | None = None,
                      K_tol: float | None = None) -> SymmetryReport:
    """Curvature and tangential sup-norms, direction constancy and 1D trace spread per component.

    Regions are connected components of the active set within each x-slice.
    Default thresholds: ``1e-10`` rad and ``1e-8`` for K with closed-form
    derivatives, ``min(10 h, 0.1)`` rad and ``C h^2`` (C = 10 max|H|) otherwise.
    """
    mode = md.resolve_mode(sol, mode)
    grid = sol.grid
    m = grid.m
    comps = []
    notes = []
    Ksup_all = []
    for k, f in enumerate(sol):
        b = geo.compute_STU(f, mode, eps_grad)
        mk = b.active.mask
        if not mk.any():
            notes.append(f"component {k}: empty active set")
            continue
        nu = b.nu
        tq = np.linalg.norm(b.tangential_q(), axis=-1)
        lab, count = _slice_regions(mk, m)
        max_dev = 0.0
        spread = 0.0
        dirs = []
        y = grid.points()[..., m:]
        for r in range(1, count + 1):
            sel = lab == r
            mean = np.sum(nu[sel], axis=0)
            mean = mean / np.linalg.norm(mean)
            dev = float(np.max(_angle(nu[sel], mean[None, :])))
            max_dev = max(max_dev, dev)
            if len(dirs) < 16:
                dirs.append(mean.tolist())
            s = y[sel] @ mean
            key = np.round(s, 9)
            vals = f.values[sel]
            order = np.lexsort((vals, key))
            ks, vs = key[order], vals[order]
            brk = np.flatnonzero(np.diff(ks) != 0) + 1
            for grp in np.split(vs, brk):
                if grp.size > 1:
                    spread = max(spread, float(grp.max() - grp.min()))
        supK = float(np.max(b.K[mk]))
        Ksup_all.append(float(np.max(np.abs(b.hess[mk]))))
        comps.append(ComponentSymmetry(supK, float(np.max(tq[mk])), int(count), max_dev, spread,
                                       b.active.active_fraction, dirs))
    if angle_tol is None:
        angle_tol = _default_angle_tol(mode, grid)
    if K_tol is None:
        K_tol = 1e-8 if mode == "analytic" else 10 * grid.h_max ** 2 * max(Ksup_all, default=1.0)
    return SymmetryReport(comps, float(angle_tol), float(K_tol), notes)


@dataclass
class AlignmentReport:
    pairs: dict
    interval_audit: dict
    tol: float

    @property
    def verdict(self) -> str:
        return "pass"

    def to_report(self, inputs=None, name="direction-alignment") -> Report:
        return Report(name, inputs or {}, {
            "pairs": {f"{j},{k}": v for (j, k), v in self.pairs.items()},
            "interval_audit": {f"{j},{k}": v for (j, k), v in self.interval_audit.items()},
        }, self.verdict, {"tol": self.tol})


def _interval_audit(problem, sol, j, k, max_samples=400, tol=1e-12):
    """Greedy search for a box of values on which F_jk keeps one strict sign and which meets the image."""
    grid = problem.grid
    U = sol.stacked().reshape(-1, problem.n)
    X = problem.x_nodes().reshape(-1, grid.m)
    stride = max(1, U.shape[0] // max_samples)
    U, X = U[::stride], X[::stride]
    Hs = problem.potential.hess(X, U)[:, j, k]
    seeds = np.flatnonzero(np.abs(Hs) > tol)
    if seeds.size == 0:
        return {"found": False, "reason": "F_jk vanishes on the sampled image"}
    span = np.maximum(U.max(axis=0) - U.min(axis=0), 1e-6)
    best = None
    lattice = np.array(list(itertools.product(np.linspace(-1, 1, 5), repeat=problem.n)))
    for s in seeds[:: max(1, seeds.size // 20)]:
        sign = np.sign(Hs[s])
        half = 1e-3 * span
        ok_half = None
        for _ in range(30):
            pts = U[s] + lattice * half
            vals = problem.potential.hess(np.broadcast_to(X[s], (pts.shape[0], grid.m)), pts)[:, j, k]
            if np.all(sign * vals > tol):
                ok_half = half.copy()
                half = half * 1.5
            else:
                break
        if ok_half is not None:
            vol = float(np.prod(ok_half))
            if best is None or vol > best["volume"]:
                best = {"found": True, "center": U[s].tolist(), "half_widths": ok_half.tolist(),
                        "sign": int(sign), "volume": vol}
    return best or {"found": False, "reason": "no box with constant sign around sampled image points"}


def direction_alignment(problem: md.Problem, sol: md.SolutionTuple, mode: str = "auto",
                        eps_grad: float | None = None, tol: float | None = None) -> AlignmentReport:
    """Pairwise ``<omega_j, omega_k>`` statistics and the interval-hypothesis audit.

    A pair is aligned (anti-aligned) when the angle between the directions
    (between one and the negated other) stays within ``tol`` radians.
    Anti-aligned pairs are reported as aligned after renaming (flipping the
    profile of one component reverses its direction).
    """
    mode = md.resolve_mode(sol, mode)
    grid = problem.grid
    m = grid.m
    if tol is None:
        tol = _default_angle_tol(mode, grid)
    nus, masks = [], []
    for f in sol:
        act = geo.active_region(f, eps_grad, mode)
        gy = fl.y_grad(f, mode)
        with np.errstate(divide="ignore", invalid="ignore"):
            nus.append(gy / act.grad_y_norm[..., None])
        masks.append(act.mask)
    pairs, audit = {}, {}
    for j, k in itertools.combinations(range(problem.n), 2):
        common = masks[j] & masks[k]
        if not common.any():
            pairs[(j, k)] = {"verdict": "mixed", "reason": "no common active nodes"}
        else:
            a, b = nus[j][common], nus[k][common]
            c = np.sum(a * b, axis=-1)
            if np.max(_angle(a, b)) <= tol:
                verdict, renamed = "aligned", "aligned"
            elif np.max(_angle(a, -b)) <= tol:
                verdict, renamed = "anti-aligned", "aligned"
            else:
                verdict, renamed = "mixed", "mixed"
            pairs[(j, k)] = {"min": float(c.min()), "max": float(c.max()), "mean": float(c.mean()),
                             "verdict": verdict, "after_renaming": renamed}
        audit[(j, k)] = _interval_audit(problem, sol, j, k)
    return AlignmentReport(pairs, audit, float(tol))


# ---------------------------------------------------------------------------
# Growth exponent and the double-well counterexample
# ---------------------------------------------------------------------------

@dataclass
class GrowthExponent:
    alpha: float
    C: float
    radii: list
    maxima: list
    skipped: int
    trivial: bool

    @property
    def verdict(self) -> str:
        return "skipped" if self.trivial else "pass"

    def to_report(self, inputs=None, name="growth-exponent") -> Report:
        return Report(name, inputs or {}, {"alpha": self.alpha, "C": self.C, "skipped": self.skipped,
                                           "trivial": self.trivial},
                      self.verdict, {}, [{"R": R, "max_sum": v} for R, v in zip(self.radii, self.maxima)])


def _growth_fit(radii, maxima):
    radii = np.asarray(radii, dtype=float)
    maxima = np.asarray(maxima, dtype=float)
    if np.all(np.abs(maxima) < 1e-12):
        return GrowthExponent(float("nan"), 0.0, radii.tolist(), maxima.tolist(), 0, True)
    alpha, C, skipped = _fit_loglog(1 + radii, maxima)
    return GrowthExponent(alpha, C, radii.tolist(), maxima.tolist(), skipped, False)


def growth_exponent(sol: md.SolutionTuple, radii, center=None) -> GrowthExponent:
    """Fit ``log max_{|X| ~ R} sum_i u^i`` against ``log(1 + R)`` over grid shells of width h."""
    grid = sol.grid
    r = grid.radius(center)
    total = sum(f.values for f in sol)
    maxima = []
    for R in radii:
        shell = np.abs(r - R) <= grid.h_max
        if not shell.any():
            raise TruncationError(f"no nodes near radius {R}")
        maxima.append(float(np.max(total[shell])))
    return _growth_fit(radii, maxima)


def profile_growth_exponent(profile: sv.BLWZProfile, radii=None) -> GrowthExponent:
    """Same fit for a 1D pair, using ``max(u+v)`` at ``t = +-R``."""
    L = float(profile.t[-1])
    if radii is None:
        radii = np.linspace(L / 3, 0.9 * L, 12)
    s = profile.u + profile.v
    maxima = [max(np.interp(R, profile.t, s), np.interp(-R, profile.t, s)) for R in radii]
    if profile.trivial:
        return GrowthExponent(float("nan"), 0.0, list(map(float, radii)), maxima, 0, True)
    return _growth_fit(radii, maxima)


@dataclass
class ABGAudit:
    values_at_minima: list
    hessians: list
    min_eigenvalues: list
    F12_witness: list
    positive_off_minima: bool
    min_off_value: float
    R0: float
    radial_ok: bool

    @property
    def passed(self) -> bool:
        return (all(v == 0.0 for v in self.values_at_minima) and all(e >= 1 for e in self.min_eigenvalues)
                and self.F12_witness[0]["F12"] < 0 < self.F12_witness[1]["F12"]
                and self.positive_off_minima and self.radial_ok)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_report(self, inputs=None, name="abg-audit") -> Report:
        return Report(name, inputs or {}, {k: getattr(self, k) for k in (
            "values_at_minima", "hessians", "min_eigenvalues", "F12_witness", "positive_off_minima",
            "min_off_value", "R0", "radial_ok")}, self.verdict, {})


def abg_audit(sample_spec: dict | None = None) -> ABGAudit:
    """Audit of the double well ``(x1-1)^2 x2^2 + (x2^2-1)^2`` in its original sign."""
    spec = {"box": 4.0, "n": 201, "radial_max": 20.0, "n_radial": 400, "n_angle": 720, "exclusion": 1e-3}
    spec.update(sample_spec or {})
    minima = np.array([[1.0, 1.0], [1.0, -1.0]])
    vals = [float(v) for v in md.abg_function(minima)]
    Hs = md.abg_hessian(minima)
    eigs = [float(np.linalg.eigvalsh(H)[0]) for H in Hs]
    wit_pts = np.array([[0.0, 1.0], [2.0, 1.0]])
    F12 = md.abg_hessian(wit_pts)[:, 0, 1]
    witness = [{"point": p.tolist(), "F12": float(f)} for p, f in zip(wit_pts, F12)]
    s = np.linspace(-spec["box"], spec["box"], int(spec["n"]))
    P = np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1).reshape(-1, 2)
    dmin = np.min(np.linalg.norm(P[:, None, :] - minima[None], axis=-1), axis=1)
    off = dmin > spec["exclusion"]
    Fo = md.abg_function(P[off])
    # radial monotonicity: smallest sampled radius beyond which grad F . xi >= 0 everywhere
    th = np.linspace(0, 2 * np.pi, int(spec["n_angle"]), endpoint=False)
    rr = np.linspace(0, spec["radial_max"], int(spec["n_radial"]))
    Q = np.stack(np.meshgrid(rr, th, indexing="ij"), axis=-1)
    Xi = np.stack([Q[..., 0] * np.cos(Q[..., 1]), Q[..., 0] * np.sin(Q[..., 1])], axis=-1)
    rad = np.sum(md.abg_gradient(Xi) * Xi, axis=-1)
    bad = np.flatnonzero(np.any(rad < 0, axis=1))
    R0 = float(rr[bad[-1] + 1]) if bad.size and bad[-1] + 1 < rr.size else (0.0 if not bad.size else float("inf"))
    return ABGAudit(vals, Hs.tolist(), eigs, witness, bool(np.all(Fo > 0)), float(Fo.min()), R0,
                    bool(np.isfinite(R0)))

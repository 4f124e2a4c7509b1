"""
Box solvers for the quasilinear system, 1D BLWZ profiles and 1D extensions.

Both schemes drive the piecewise-linear residual of
:func:`fibered.model.strong_residual` to zero on the free nodes; Dirichlet
values are taken from the initial tuple and never touched.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from . import fields as fl
from . import model as md
from .errors import DomainError, InputError, StepFailure

logger = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    scheme: str = "damped-newton"  # or "gradient-flow"
    step: float = 1.0  # Newton damping cap, or initial pseudo-time step
    residual_tol: float = 1e-8
    max_iterations: int = 50
    log_every: int = 1
    checkpoint_dir: str | None = None
    checkpoint_every: int = 0
    max_step: float = 1e3

    def __post_init__(self):
        if self.scheme not in ("damped-newton", "gradient-flow"):
            raise InputError(f"unknown scheme {self.scheme!r}")
        if not self.residual_tol > 0:
            raise InputError("residual_tol must be positive")
        if self.max_iterations < 1:
            raise InputError("max_iterations must be >= 1")
        if not self.step > 0:
            raise InputError("step must be positive")


@dataclass
class ConvergenceLog:
    scheme: str
    iterations: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    step: list = field(default_factory=list)
    converged: bool = False

    def record(self, it, res, en, step):
        self.iterations.append(int(it))
        self.residual.append(float(res))
        self.energy.append(float(en))
        self.step.append(float(step))

    def energy_monotone(self, rtol: float = 1e-10) -> bool:
        e = np.asarray(self.energy)
        if e.size < 2:
            return True
        return bool(np.all(np.diff(e) <= rtol * (1.0 + np.abs(e[:-1]))))

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
            "energy": self.energy,
            "step": self.step,
        }


# ---------------------------------------------------------------------------
# Sparse operators
# ---------------------------------------------------------------------------

def stiffness_matrix(coef: md.Coefficient, values: np.ndarray, grid: fl.Grid, linearized: bool = True,
                     t_floor: float = 1e-10) -> sp.csr_matrix:
    """Hessian of the piecewise-linear gradient energy at the state ``values``.

    ``sum_T |T| G_T^T A G_T`` with the flux Jacobian
    ``A = a I + a' g g^T/|g|`` when ``linearized``; otherwise the frozen
    coefficient ``a I`` (Picard matrix). Not divided by nodal weights.
    """
    u = np.asarray(values, dtype=float).ravel()
    vol = fl.simplex_volume(grid)
    out = sp.csr_matrix((grid.size, grid.size))
    for G, xb in fl.simplex_operators(grid):
        g = np.stack([Gj @ u for Gj in G], axis=-1)
        t = np.maximum(np.linalg.norm(g, axis=-1), t_floor)
        with np.errstate(over="ignore"):
            a = coef.value(xb, t)
            da = coef.dt(xb, t) if linearized else np.zeros_like(t)
        for j in range(grid.N):
            for l in range(grid.N):
                A = da / t * g[:, j] * g[:, l]
                if j == l:
                    A = A + a
                elif not linearized:
                    continue
                out = out + G[j].T @ sp.diags(vol * A) @ G[l]
    return out.tocsr()


def _potential_blocks(problem: md.Problem, U: np.ndarray) -> np.ndarray:
    return problem.potential.hess(problem.x_nodes(), U)


def system_jacobian(problem: md.Problem, sol: md.SolutionTuple, free: np.ndarray,
                    linearized: bool = True, weighted: bool = False) -> sp.csr_matrix:
    """Block Jacobian of the residual restricted to free nodes.

    ``weighted=True`` returns ``W J`` (symmetric when linearized); otherwise
    the residual Jacobian ``J`` itself.
    """
    grid = problem.grid
    w = grid.weights().ravel()
    fr = free.ravel()
    H = _potential_blocks(problem, sol.stacked()).reshape(-1, problem.n, problem.n)
    blocks = []
    for i in range(problem.n):
        row = []
        for j in range(problem.n):
            if i == j:
                K = stiffness_matrix(problem.coefficients[i], sol[i].values, grid, linearized)
                K = K - sp.diags(w * H[:, i, i])
            else:
                K = sp.diags(-w * H[:, i, j])
            if not weighted:
                K = sp.diags(1.0 / np.where(w > 0, w, 1.0)) @ K
            row.append(K.tocsr()[fr][:, fr])
        blocks.append(row)
    return sp.bmat(blocks, format="csr")


# ---------------------------------------------------------------------------
# Solve
# ---------------------------------------------------------------------------

def _assemble(problem, base: md.SolutionTuple, z: np.ndarray, free: np.ndarray) -> md.SolutionTuple:
    grid = problem.grid
    nf = int(free.sum())
    out = []
    for i in range(problem.n):
        v = np.array(base[i].values)
        v[free] = z[i * nf:(i + 1) * nf]
        out.append(fl.ScalarField(grid, fl.fill_periodic(v, grid)))
    return md.SolutionTuple(out)


def _residual_vector(problem, sol, free):
    R = md.strong_residual(problem, sol)
    return np.concatenate([r[free] for r in R])


def save_checkpoint(directory, sol: md.SolutionTuple, iteration: int) -> None:
    os.makedirs(directory, exist_ok=True)
    for i, f in enumerate(sol):
        fl.save_field(os.path.join(directory, f"u{i}.csv"), f)
    with open(os.path.join(directory, "checkpoint.json"), "w") as fh:
        json.dump({"iteration": iteration, "n": sol.n}, fh)


def load_checkpoint(directory) -> tuple:
    with open(os.path.join(directory, "checkpoint.json")) as fh:
        meta = json.load(fh)
    fields = [fl.load_field(os.path.join(directory, f"u{i}.csv")) for i in range(meta["n"])]
    return md.SolutionTuple(fields), meta["iteration"]


def _sup(R):
    return float(np.max(np.abs(R))) if R.size else 0.0


def solve(problem: md.Problem, init: md.SolutionTuple, config: SolverConfig | None = None,
          start_iteration: int = 0):
    """Solve the system starting from ``init``; returns ``(solution, log)``.

    Raises :class:`StepFailure` when the line search cannot make progress.
    ``start_iteration`` offsets the iteration counter (used by :func:`resume`).
    """
    config = config or SolverConfig()
    grid = problem.grid
    if init.grid != grid:
        raise InputError("initial tuple is not on the problem grid")
    if init.n != problem.n:
        raise InputError(f"initial tuple has {init.n} components, problem has {problem.n}")
    free = grid.free_mask()
    sol = md.SolutionTuple([fl.ScalarField(grid, fl.fill_periodic(f.values, grid)) for f in init])
    z = np.concatenate([f.values[free] for f in sol])
    log = ConvergenceLog(config.scheme)
    R = _residual_vector(problem, sol, free)
    E = md.energy(problem, sol)
    log.record(start_iteration, _sup(R), E, 0.0)
    tau = config.step
    it = start_iteration
    for it in range(start_iteration + 1, start_iteration + config.max_iterations + 1):
        if _sup(R) <= config.residual_tol:
            it -= 1
            break
        if config.scheme == "damped-newton":
            J = system_jacobian(problem, sol, free, linearized=True)
            try:
                dz = spla.spsolve(J.tocsc(), -R)
            except RuntimeError as exc:  # singular factorization
                raise StepFailure(f"linear solve failed: {exc}", sol, log) from exc
            if not np.all(np.isfinite(dz)):
                dz = spla.lsqr(J, -R)[0]
            merit = 0.5 * R @ R
            s = min(1.0, config.step)
            while True:
                trial = _assemble(problem, sol, z + s * dz, free)
                Rt = _residual_vector(problem, trial, free)
                if np.all(np.isfinite(Rt)) and 0.5 * Rt @ Rt <= (1 - 1e-4 * s) * merit:
                    break
                s *= 0.5
                if s < 1e-10:
                    raise StepFailure("line search failed to reduce the residual", sol, log)
            z, sol, R = z + s * dz, trial, Rt
            E = md.energy(problem, sol)
            step_taken = s
        else:
            P = system_jacobian(problem, sol, free, linearized=False)
            tries = 0
            while True:
                A = sp.identity(P.shape[0], format="csr") / tau + P
                dz = spla.spsolve(A.tocsc(), -R)
                trial = _assemble(problem, sol, z + dz, free)
                Rt = _residual_vector(problem, trial, free)
                Et = md.energy(problem, trial)
                if np.all(np.isfinite(Rt)) and Et <= E + 1e-12 * (1.0 + abs(E)):
                    break
                tau *= 0.5
                tries += 1
                if tau < 1e-12 or tries > 60:
                    raise StepFailure("pseudo-time step underflow: energy cannot decrease", sol, log)
            z, sol, R, E = z + dz, trial, Rt, Et
            step_taken = tau
            tau = min(tau * 1.5, config.max_step)
        if config.log_every and it % config.log_every == 0:
            log.record(it, _sup(R), E, step_taken)
            logger.debug("iter %d residual %.3e energy %.10g", it, log.residual[-1], E)
        if config.checkpoint_dir and config.checkpoint_every and it % config.checkpoint_every == 0:
            save_checkpoint(config.checkpoint_dir, sol, it)
    log.converged = _sup(R) <= config.residual_tol
    if log.iterations[-1] != it:
        log.record(it, _sup(R), E, 0.0)
    if config.checkpoint_dir:
        save_checkpoint(config.checkpoint_dir, sol, it)
    return sol, log


def resume(problem: md.Problem, config: SolverConfig):
    """Continue a run from the checkpoint in ``config.checkpoint_dir``."""
    if not config.checkpoint_dir:
        raise InputError("resume needs a checkpoint_dir")
    sol, it = load_checkpoint(config.checkpoint_dir)
    return solve(problem, sol, config, start_iteration=it)


# ---------------------------------------------------------------------------
# 1D profiles and extensions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Profile1D:
    """A scalar profile ``s -> ubar(s)`` with first and second derivatives."""

    value: Callable
    d1: Callable
    d2: Callable
    label: str = "profile"


def tanh_profile(width: float = np.sqrt(2.0)) -> Profile1D:
    """``tanh(s / width)``; the Allen-Cahn kink for ``width = sqrt(2)``."""
    def value(s):
        return np.tanh(s / width)

    def d1(s):
        # sech^2 via exp(-2|z|) to avoid cosh overflow in the tails
        e = np.exp(-2.0 * np.abs(np.asarray(s, dtype=float) / width))
        return 4.0 * e / (width * (1.0 + e) ** 2)

    def d2(s):
        th = np.tanh(s / width)
        return -2.0 * th * (1 - th ** 2) / width ** 2

    return Profile1D(value, d1, d2, "tanh")


def linear_profile(slope: float = 1.0, offset: float = 0.0) -> Profile1D:
    return Profile1D(lambda s: slope * np.asarray(s) + offset,
                     lambda s: np.full(np.shape(s), float(slope)),
                     lambda s: np.zeros(np.shape(s)), "linear")


def spline_profile(t: np.ndarray, values: np.ndarray, label: str = "spline") -> Profile1D:
    """Cubic-spline profile, continued linearly (C^1) outside the sampled range."""
    cs = CubicSpline(t, values)
    d1, d2 = cs.derivative(1), cs.derivative(2)
    lo, hi = t[0], t[-1]
    vlo, vhi, slo, shi = cs(lo), cs(hi), d1(lo), d1(hi)

    def value(s):
        s = np.asarray(s, dtype=float)
        return np.where(s < lo, vlo + slo * (s - lo), np.where(s > hi, vhi + shi * (s - hi), cs(np.clip(s, lo, hi))))

    def der1(s):
        s = np.asarray(s, dtype=float)
        return np.where(s < lo, slo, np.where(s > hi, shi, d1(np.clip(s, lo, hi))))

    def der2(s):
        s = np.asarray(s, dtype=float)
        return np.where((s < lo) | (s > hi), 0.0, d2(np.clip(s, lo, hi)))

    return Profile1D(value, der1, der2, label)


def extend_1d_to_nd(profile: Profile1D, omega, grid: fl.Grid, x_shift: fl.AnalyticField | None = None,
                    strict: bool = False) -> fl.ScalarField:
    """Field ``u(x, y) = ubar(<omega, y> + shift(x))`` with exact derivative callbacks.

    ``x_shift`` is an optional closed-form function of ``x`` (its callbacks
    receive points of shape ``(..., m)``).
    """
    omega = np.asarray(omega, dtype=float).ravel()
    m, N = grid.m, grid.N
    if omega.size != N - m:
        raise InputError(f"omega must have {N - m} components")
    nrm = np.linalg.norm(omega)
    if abs(nrm - 1.0) > 1e-12:
        if strict or nrm == 0:
            raise InputError(f"omega is not a unit vector (|omega| = {nrm:.15g})")
        warnings.warn(f"normalizing omega (|omega| = {nrm:.6g})", stacklevel=2)
        omega = omega / nrm

    def arg(X):
        z = X[..., m:] @ omega
        if x_shift is not None:
            z = z + x_shift.value(X[..., :m])
        return z

    def dz(X):
        d = np.zeros(X.shape)
        d[..., m:] = omega
        if x_shift is not None:
            d[..., :m] = x_shift.gradient(X[..., :m])
        return d

    def value(X):
        return profile.value(arg(X))

    def gradient(X):
        return profile.d1(arg(X))[..., None] * dz(X)

    def hessian(X):
        z, d = arg(X), dz(X)
        H = profile.d2(z)[..., None, None] * d[..., :, None] * d[..., None, :]
        if x_shift is not None:
            H[..., :m, :m] += profile.d1(z)[..., None, None] * x_shift.hessian(X[..., :m])
        return H

    return fl.sample(fl.AnalyticField(value, gradient, hessian), grid)


@dataclass
class BLWZProfile:
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    residual: float
    iterations: int
    trivial: bool
    center: float
    reflection_defect: float
    monotone: bool
    nonnegative: bool
    notes: list = field(default_factory=list)

    def profiles(self) -> tuple:
        return spline_profile(self.t, self.u, "blwz-u"), spline_profile(self.t, self.v, "blwz-v")

    def to_dict(self) -> dict:
        return {
            "L": float(self.t[-1]),
            "h": float(self.t[1] - self.t[0]),
            "residual": self.residual,
            "iterations": self.iterations,
            "trivial": self.trivial,
            "center": self.center,
            "reflection_defect": self.reflection_defect,
            "monotone": self.monotone,
            "nonnegative": self.nonnegative,
            "notes": self.notes,
        }


def _blwz_residual(u, v, h, s1, s2):
    n = u.size
    # ghosts: u'(L) = s1, v'(-L) = -s2 (second-order reflection)
    ue = np.concatenate([[0.0], u, [u[-2] + 2 * h * s1]])
    ve = np.concatenate([[v[1] + 2 * h * s2], v, [0.0]])
    ru = (ue[2:] - 2 * ue[1:-1] + ue[:-2]) / h ** 2 - u * v ** 2
    rv = (ve[2:] - 2 * ve[1:-1] + ve[:-2]) / h ** 2 - v * u ** 2
    ru[0] = u[0]          # u(-L) = 0
    rv[-1] = v[-1]        # v(L) = 0
    return ru, rv


def _blwz_jacobian(u, v, h):
    n = u.size
    main = np.full(n, -2.0 / h ** 2)
    off = np.full(n - 1, 1.0 / h ** 2)
    Lu = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    Lv = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    Lu[n - 1, n - 2] = 2.0 / h ** 2
    Lv[0, 1] = 2.0 / h ** 2
    Juu = Lu - sp.diags(v ** 2)
    Juv = sp.diags(-2 * u * v).tolil()
    Jvv = Lv - sp.diags(u ** 2)
    Jvu = sp.diags(-2 * u * v).tolil()
    Juu = Juu.tolil()
    Jvv = Jvv.tolil()
    Juu[0, :] = 0
    Juu[0, 0] = 1.0
    Juv[0, :] = 0
    Jvv[n - 1, :] = 0
    Jvv[n - 1, n - 1] = 1.0
    Jvu[n - 1, :] = 0
    return sp.bmat([[Juu, Juv], [Jvu, Jvv]], format="csc")


def blwz_profile_1d(L: float = 30.0, h: float = 0.02, slopes=(1.0, 1.0), tol: float = 1e-10,
                    max_iterations: int = 100) -> BLWZProfile:
    """Solve ``u'' = u v^2, v'' = v u^2`` on ``[-L, L]``.

    Boundary data: ``u(-L) = 0``, ``u'(L) = slopes[0]``, ``v'(-L) = -slopes[1]``,
    ``v(L) = 0``. Newton iteration with backtracking from a smoothed
    hockey-stick guess.
    """
    if L <= 0 or h <= 0:
        raise DomainError("L and h must be positive")
    n = int(round(2 * L / h)) + 1
    t = np.linspace(-L, L, n)
    h = t[1] - t[0]
    s1, s2 = (float(s) for s in slopes)
    u = s1 * 0.5 * (t + np.sqrt(t ** 2 + 1.0))
    v = s2 * 0.5 * (-t + np.sqrt(t ** 2 + 1.0))
    u[0] = 0.0
    v[-1] = 0.0
    notes = []
    it = 0
    for it in range(1, max_iterations + 1):
        ru, rv = _blwz_residual(u, v, h, s1, s2)
        R = np.concatenate([ru, rv])
        if np.max(np.abs(R)) <= tol:
            break
        J = _blwz_jacobian(u, v, h)
        d = spla.spsolve(J, -R)
        s = 1.0
        merit = R @ R
        while s > 1e-10:
            un, vn = u + s * d[:n], v + s * d[n:]
            rn = np.concatenate(_blwz_residual(un, vn, h, s1, s2))
            if rn @ rn <= (1 - 1e-4 * s) * merit:
                break
            s *= 0.5
        u, v = un, vn
    ru, rv = _blwz_residual(u, v, h, s1, s2)
    res = float(max(np.max(np.abs(ru)), np.max(np.abs(rv))))
    scale = max(np.max(np.abs(u)), np.max(np.abs(v)))
    trivial = bool(scale < 1e-8)
    if trivial:
        notes.append("collapsed to the trivial solution; increase boundary slopes or the domain")
    if abs(s1 * L) > 0 and np.max(np.abs(u[: n // 10] * v[: n // 10] ** 2)) > 1e-3:
        notes.append("u v^2 does not decay at the left end; L may be too small")
    center, defect = _reflection_defect(t, u, v)
    tol_m = 1e-12 * max(1.0, scale)
    monotone = bool(np.all(np.diff(u) >= -tol_m) and np.all(np.diff(v) <= tol_m))
    nonneg = bool(np.all(u >= -tol_m) and np.all(v >= -tol_m))
    return BLWZProfile(t, u, v, res, it, trivial, center, defect, monotone, nonneg, notes)


def _reflection_defect(t, u, v):
    d = u - v
    if np.all(d == 0) or not (np.any(d > 0) and np.any(d < 0)):
        return float("nan"), float(np.max(np.abs(u - v[::-1])))
    cu, cv = CubicSpline(t, u), CubicSpline(t, v)
    k = int(np.flatnonzero(np.diff(np.sign(d)) != 0)[0])
    t0 = t[k] - d[k] * (t[k + 1] - t[k]) / (d[k + 1] - d[k])
    L = t[-1]
    h = t[1] - t[0]
    tau = t[np.abs(t) <= 0.9 * L - abs(t0) - 5 * h]
    if tau.size == 0:
        return float(t0), float("nan")

    def defect(c):
        return float(np.max(np.abs(cu(c + tau) - cv(c - tau))))

    opt = minimize_scalar(defect, bounds=(t0 - 5 * h, t0 + 5 * h), method="bounded",
                          options={"xatol": 1e-12})
    return float(opt.x), float(min(opt.fun, defect(t0)))


# ---------------------------------------------------------------------------
# Initializations
# ---------------------------------------------------------------------------

def tanh_front(grid: fl.Grid, omega=None, width: float = np.sqrt(2.0), shift: float = 0.0) -> fl.ScalarField:
    omega = np.eye(grid.dim_y)[-1] if omega is None else omega
    prof = tanh_profile(width)
    f = extend_1d_to_nd(prof, omega, grid)
    if shift:
        f = fl.ScalarField(grid, prof.value(grid.points()[..., grid.m:] @ np.asarray(omega) - shift))
    return f


def smooth_perturbation(grid: fl.Grid, seed: int = 0, amplitude: float = 0.1, modes: int = 3) -> np.ndarray:
    """Random smooth field vanishing on every non-periodic face."""
    rng = np.random.default_rng(seed)
    pts = grid.points()
    out = np.zeros(grid.shape)
    bump = np.ones(grid.shape)
    for k, (lo, hi) in enumerate(grid.extents):
        if grid.boundary[k] != "periodic":
            s = (pts[..., k] - lo) / (hi - lo)
            bump = bump * np.sin(np.pi * s)
    for _ in range(modes):
        w = rng.normal(size=grid.N) / np.array([hi - lo for lo, hi in grid.extents]) * 2 * np.pi
        out += rng.normal() * np.sin(pts @ w + rng.uniform(0, 2 * np.pi))
    return amplitude * bump * out / max(1, modes)

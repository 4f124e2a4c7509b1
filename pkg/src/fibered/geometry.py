"""
Level-set geometry of a field in the y-variables.

On the active set where the y-gradient does not vanish, every quantity is
computed pointwise from the gradient ``g`` and Hessian ``H`` of ``u``:

* ``q = grad |grad_y u| = H[:, y] nu`` with ``nu = grad_y u / |grad_y u|``,
* ``S = sum_ij u_{x_i y_j}^2 - |grad_x |grad_y u||^2``,
* ``T = sum_j <grad u, grad u_{y_j}>^2 - <grad u, q>^2``,
* ``U = sum_j |grad u_{y_j}|^2 - |q|^2``,
* ``K`` the root-sum-square of the principal curvatures of the y-level set.

``K`` comes from the projected y-Hessian and never from the identities it
is later compared with.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fields as fl
from . import model as md
from .errors import InputError, MaskedValueError


def _mode(u: fl.ScalarField, mode: str) -> str:
    if mode == "auto":
        return "analytic" if u.analytic is not None else "fd"
    if mode not in ("fd", "analytic"):
        raise InputError(f"unknown mode {mode!r}")
    return mode


@dataclass
class ActiveMask:
    mask: np.ndarray
    eps_grad: float
    grad_y_norm: np.ndarray

    @property
    def active_fraction(self) -> float:
        return float(np.mean(self.mask)) if self.mask.size else 0.0

    @property
    def masked_fraction(self) -> float:
        """Fraction of nodes excluded from the active set."""
        return 1.0 - self.active_fraction

    @property
    def near_threshold_fraction(self) -> float:
        """Fraction of nodes with eps < |grad_y u| <= 10 eps (reported, not judged)."""
        band = (self.grad_y_norm > self.eps_grad) & (self.grad_y_norm <= 10 * self.eps_grad)
        return float(np.mean(band)) if band.size else 0.0

    def strict(self, factor: float = 10.0) -> np.ndarray:
        return self.grad_y_norm >= factor * self.eps_grad

    def to_dict(self) -> dict:
        return {
            "eps_grad": self.eps_grad,
            "active_fraction": self.active_fraction,
            "masked_fraction": self.masked_fraction,
            "near_threshold_fraction": self.near_threshold_fraction,
        }


def active_region(u: fl.ScalarField, eps_grad: float | None = None, mode: str = "auto") -> ActiveMask:
    """Nodes where ``|grad_y u| > eps_grad``."""
    mode = _mode(u, mode)
    gy = fl.y_grad(u, mode)
    n = np.linalg.norm(gy, axis=-1)
    if eps_grad is None:
        eps_grad = md.default_eps_grad(fl.grad(u, mode))
    return ActiveMask(n > eps_grad, float(eps_grad), n)


def _grad_of_ygrad_norm(u: fl.ScalarField, g, H, mode, delta):
    m = u.grid.m
    gy = g[..., m:]
    ny = np.linalg.norm(gy, axis=-1)
    if mode == "analytic":
        with np.errstate(divide="ignore", invalid="ignore"):
            nu = gy / ny[..., None]
        return np.einsum("...ab,...b->...a", H[..., :, m:], nu)
    smooth = np.sqrt(ny ** 2 + delta ** 2)
    return fl.grad(fl.ScalarField(u.grid, smooth), "fd")


def _tangent_basis(nu: np.ndarray) -> np.ndarray:
    """Orthonormal bases of ``nu``-perpendicular spaces, shape ``(..., d, d-1)``."""
    d = nu.shape[-1]
    M = np.concatenate([nu[..., :, None], np.broadcast_to(np.eye(d), nu.shape[:-1] + (d, d))], axis=-1)
    Q, _ = np.linalg.qr(M)
    return Q[..., :, 1:d]


@dataclass
class GeometryBundle:
    """Geometric fields on the active mask; NaN elsewhere."""

    grid: fl.Grid
    mode: str
    active: ActiveMask
    grad: np.ndarray
    hess: np.ndarray
    q: np.ndarray
    S: np.ndarray
    T: np.ndarray
    U: np.ndarray
    K: np.ndarray
    tol: float = 1e-10
    notes: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.S, self.T, self.U))

    @property
    def grad_y_norm(self) -> np.ndarray:
        return self.active.grad_y_norm

    @property
    def nu(self) -> np.ndarray:
        m = self.grid.m
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.grad[..., m:] / self.grad_y_norm[..., None]

    def value_at(self, name: str, node) -> float:
        node = tuple(node)
        if not self.active.mask[node]:
            raise MaskedValueError(f"node {node} is outside the active set (|grad_y u| <= {self.active.eps_grad:g})")
        return float(getattr(self, name)[node])

    def tangential_q(self) -> np.ndarray:
        """``grad_L |grad_y u|``: the y-part of ``q`` projected off ``nu``."""
        qy = self.q[..., self.grid.m:]
        nu = self.nu
        return qy - np.sum(qy * nu, axis=-1, keepdims=True) * nu

    def negativity(self) -> dict:
        mk = self.active.mask
        out = {}
        for name in ("S", "T"):
            v = getattr(self, name)[mk]
            out[name] = float(np.min(v)) if v.size else 0.0
        umS = (self.U - self.S)[mk]
        out["U-S"] = float(np.min(umS)) if umS.size else 0.0
        out["flagged"] = [k for k, v in out.items() if v < -self.tol]
        return out

    def to_csv(self, path) -> None:
        pts = self.grid.points().reshape(-1, self.grid.N)
        cols = [pts, self.active.mask.reshape(-1, 1).astype(float)]
        cols += [getattr(self, k).reshape(-1, 1) for k in ("S", "T", "U", "K")]
        names = [f"X{k}" for k in range(self.grid.N)] + ["active", "S", "T", "U", "K"]
        np.savetxt(path, np.hstack(cols), delimiter=",", header=",".join(names), comments="", fmt="%.17g")


def _curvature_length(H, gy, ny, m):
    d = gy.shape[-1]
    if d == 1:
        return np.zeros(ny.shape)
    nu = gy / ny[..., None]
    E = _tangent_basis(nu)
    P = np.einsum("...ai,...ab,...bj->...ij", E, H[..., m:, m:], E)
    return np.linalg.norm(P, axis=(-2, -1)) / ny


def compute_STU(u: fl.ScalarField, mode: str = "auto", eps_grad: float | None = None) -> GeometryBundle:
    """Compute S, T, U (and K) on the active mask; iterating the result yields ``(S, T, U)``."""
    mode = _mode(u, mode)
    g = fl.grad(u, mode)
    H = fl.hess(u, mode)
    act = active_region(u, eps_grad, mode)
    m = u.grid.m
    mk = act.mask
    q = np.zeros(g.shape)
    S = np.full(mk.shape, np.nan)
    T = np.full(mk.shape, np.nan)
    U = np.full(mk.shape, np.nan)
    K = np.full(mk.shape, np.nan)
    qall = _grad_of_ygrad_norm(u, g, H, mode, act.eps_grad)
    if mode == "analytic":
        qall = np.where(mk[..., None], qall, 0.0)
    q[mk] = qall[mk]
    gm, Hm, qm = g[mk], H[mk], q[mk]
    Hy = Hm[:, :, m:]  # columns: grad u_{y_j}
    S[mk] = np.sum(Hm[:, :m, m:] ** 2, axis=(-2, -1)) - np.sum(qm[:, :m] ** 2, axis=-1)
    T[mk] = np.sum(np.einsum("na,naj->nj", gm, Hy) ** 2, axis=-1) - np.sum(gm * qm, axis=-1) ** 2
    U[mk] = np.sum(Hy ** 2, axis=(-2, -1)) - np.sum(qm ** 2, axis=-1)
    K[mk] = _curvature_length(Hm, gm[:, m:], act.grad_y_norm[mk], m)
    return GeometryBundle(u.grid, mode, act, g, H, q, S, T, U, K)


def curvature_length(u: fl.ScalarField, mode: str = "auto", eps_grad: float | None = None) -> np.ndarray:
    """``K_u`` on the active mask (NaN elsewhere); identically 0 when N - m = 1."""
    mode = _mode(u, mode)
    act = active_region(u, eps_grad, mode)
    g = fl.grad(u, mode)
    H = fl.hess(u, mode)
    out = np.full(act.mask.shape, np.nan)
    mk = act.mask
    out[mk] = _curvature_length(H[mk], g[mk][:, u.grid.m:], act.grad_y_norm[mk], u.grid.m)
    return out


def principal_curvatures(u: fl.ScalarField, mode: str = "auto", eps_grad: float | None = None) -> np.ndarray:
    """Eigenvalues of ``-P H_yy P / |grad_y u|`` on the tangent space, ``(..., N-m-1)``, ascending."""
    mode = _mode(u, mode)
    act = active_region(u, eps_grad, mode)
    m = u.grid.m
    d = u.grid.dim_y
    out = np.full(act.mask.shape + (max(d - 1, 0),), np.nan)
    if d == 1:
        return out
    mk = act.mask
    g = fl.grad(u, mode)[mk]
    H = fl.hess(u, mode)[mk]
    ny = act.grad_y_norm[mk]
    E = _tangent_basis(g[:, m:] / ny[:, None])
    P = np.einsum("nai,nab,nbj->nij", E, H[:, m:, m:], E)
    out[mk] = np.linalg.eigvalsh(-P / ny[:, None, None])
    return out


def _node_index(nodes, shape):
    if nodes is None:
        return None
    nodes = np.asarray(nodes)
    if nodes.dtype == bool:
        if nodes.shape != shape:
            raise InputError("node mask shape does not match the grid")
        return nodes
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(np.atleast_2d(nodes).T)] = True
    return mask


def tangential_gradient(G: fl.ScalarField, u: fl.ScalarField, nodes=None, mode: str = "auto",
                        eps_grad: float | None = None) -> np.ndarray:
    """``grad_y G - <grad_y G, nu> nu`` with ``nu = grad_y u / |grad_y u|``.

    ``nodes`` is a boolean mask or an ``(k, N)`` array of indices; any
    selected node outside the active set raises :class:`MaskedValueError`.
    Returns ``grid.shape + (N-m,)`` with NaN off the selection.
    """
    if G.grid != u.grid:
        raise InputError("G and u live on different grids")
    mode_u = _mode(u, mode)
    act = active_region(u, eps_grad, mode_u)
    sel = _node_index(nodes, act.mask.shape)
    if sel is None:
        sel = act.mask
    elif np.any(sel & ~act.mask):
        bad = np.argwhere(sel & ~act.mask)[0]
        raise MaskedValueError(f"node {tuple(int(b) for b in bad)} is outside the active set")
    gy_u = fl.y_grad(u, mode_u)
    gy_G = fl.y_grad(G, _mode(G, mode) if mode != "auto" or G.analytic is not None else "fd")
    nu = gy_u[sel] / act.grad_y_norm[sel][:, None]
    v = gy_G[sel]
    out = np.full(gy_u.shape, np.nan)
    out[sel] = v - np.sum(v * nu, axis=-1, keepdims=True) * nu
    return out


@dataclass
class IdentityReport:
    mode: str
    sup_i: float
    l2_i: float
    sup_ii: float
    l2_ii: float
    rel_sup_i: float
    rel_sup_ii: float
    active_nodes: int
    excluded_nodes: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.sup_i <= self.tol and self.sup_ii <= self.tol

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def identity_terms(u: fl.ScalarField, coef: md.Coefficient, mode: str = "auto",
                   eps_grad: float | None = None) -> dict:
    """Both sides of the two level-set identities on the evaluation mask.

    The mask is ``|grad_y u| >= 10 eps_grad``; in fd mode nodes whose
    difference stencil could straddle a zero of ``grad_y u`` are also
    dropped (``|grad_y u| < 4 h |H_{.y}|``), since ``|grad_y u|`` has a kink there.
    """
    b = compute_STU(u, mode, eps_grad)
    grid = u.grid
    m = grid.m
    mk = b.active.strict(10.0)
    if b.mode == "fd":
        mk = mk & (b.grad_y_norm >= 4 * grid.h_max * np.linalg.norm(b.hess[..., :, m:], axis=(-2, -1)))
    x = grid.points()[..., :m][mk]
    g, H, q = b.grad[mk], b.hess[mk], b.q[mk]
    A = md.assemble_A(coef, x, g)
    Hy = H[:, :, m:]
    lhs_i = np.einsum("naj,nab,nbj->n", Hy, A, Hy) - np.einsum("na,nab,nb->n", q, A, q)
    t = np.linalg.norm(g, axis=-1)
    rhs_i = coef.value(x, t) * b.U[mk] + coef.dt(x, t) / t * b.T[mk]
    ny = b.grad_y_norm[mk]
    lhs_ii = b.U[mk] - b.S[mk]
    tq = b.tangential_q()[mk]
    rhs_ii = b.K[mk] ** 2 * ny ** 2 + np.sum(tq ** 2, axis=-1)
    return {"bundle": b, "mask": mk, "lhs_i": lhs_i, "rhs_i": rhs_i, "lhs_ii": lhs_ii, "rhs_ii": rhs_ii}


def identity_check(u: fl.ScalarField, coef: md.Coefficient, mode: str = "auto", eps_grad: float | None = None,
                   tol: float | None = None) -> IdentityReport:
    """Sup and L2 residuals of the two identities on ``|grad_y u| >= 10 eps_grad``.

    Default tolerance: 1e-8 in analytic mode, ``10 h^2`` times the term scale in fd mode.
    """
    terms = identity_terms(u, coef, mode, eps_grad)
    b, mk = terms["bundle"], terms["mask"]
    w = u.grid.weights()[mk]
    r1 = terms["lhs_i"] - terms["rhs_i"]
    r2 = terms["lhs_ii"] - terms["rhs_ii"]

    def sup(r):
        return float(np.max(np.abs(r))) if r.size else 0.0

    def l2(r):
        return float(np.sqrt(np.sum(w * r ** 2))) if r.size else 0.0

    s1 = max(1.0, sup(terms["lhs_i"]))
    s2 = max(1.0, sup(terms["lhs_ii"]))
    if tol is None:
        tol = 1e-8 if b.mode == "analytic" else 10 * u.grid.h_max ** 2 * max(s1, s2)
    return IdentityReport(b.mode, sup(r1), l2(r1), sup(r2), l2(r2), sup(r1) / s1, sup(r2) / s2,
                          int(mk.sum()), int((~mk).sum()), float(tol))


def fd_refinement_study(af: fl.AnalyticField, grid: fl.Grid, coef: md.Coefficient,
                        floor: float = 1e-10, boundary_layer: int = 2) -> dict:
    """Observed fd-mode convergence order of both identities under one refinement.

    Residuals are compared on the coarse nodes kept by both evaluation masks
    and lying at least ``boundary_layer`` coarse nodes inside non-periodic
    faces: the nested one-sided differences behind the fd Hessian are only
    first order within two nodes of a face.
    An identity whose coarse residual is below ``floor`` times its scale holds
    to roundoff and is reported as exact (order ``None``).
    """
    fine_grid = grid.refined(2)
    sub = tuple(slice(None, None, 2) for _ in range(grid.N))
    res = []
    for g in (grid, fine_grid):
        f = fl.ScalarField(g, fl.sample(af, g).values)
        t = identity_terms(f, coef, "fd")
        full = {}
        for key in ("i", "ii"):
            r = np.full(g.shape, np.nan)
            r[t["mask"]] = np.abs(t["lhs_" + key] - t["rhs_" + key])
            full[key] = r
        full["scale"] = max(1.0, float(np.max(np.abs(t["lhs_ii"]), initial=0.0)),
                            float(np.max(np.abs(t["lhs_i"]), initial=0.0)))
        full["mask"] = t["mask"]
        res.append(full)
    coarse, fine = res
    common = coarse["mask"] & fine["mask"][sub] & grid.interior_mask(boundary_layer)
    out = {"common_nodes": int(common.sum()), "h": grid.h_max, "boundary_layer": boundary_layer}
    for key in ("i", "ii"):
        ec = float(np.max(coarse[key][common], initial=0.0))
        ef = float(np.max(fine[key][sub][common], initial=0.0))
        exact = ec <= floor * coarse["scale"]
        order = None if exact or ef == 0 else float(np.log2(ec / ef))
        out[key] = {"coarse": ec, "fine": ef, "exact": bool(exact), "order": order}
    return out

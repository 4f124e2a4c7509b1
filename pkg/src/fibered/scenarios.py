"""
Scenario registry: each scenario builds a problem, solves it when needed and
returns a list of diagnostic tasks for the orchestrator in :mod:`fibered.cli`.

Tasks are plain callables returning :class:`fibered.reports.Report`; every
randomized task draws from its own generator seeded by ``(seed, task name)``
so results do not depend on execution order or thread count.
"""

from __future__ import annotations

import logging
import os
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import diagnostics as dg
from . import fields as fl
from . import geometry as geo
from . import model as md
from . import solver as sv
from .errors import ConfigError, StepFailure
from .reports import Report, write_rows

logger = logging.getLogger(__name__)


@dataclass
class Task:
    name: str
    fn: Callable[[], Report]
    expected: str | None = None  # expected verdict for counterexample checks


@dataclass
class Context:
    seed: int = 0
    grid_scale: int = 1
    out: str | None = None
    tolerances: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    manifest: list = field(default_factory=list)

    def rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode())])

    def nodes(self, n: int) -> int:
        return (int(n) - 1) * self.grid_scale + 1

    def tol(self, name: str, default=None):
        return self.tolerances.get(name, default)

    def solver_config(self, **defaults) -> sv.SolverConfig:
        cfg = dict(defaults)
        cfg.update(self.solver)
        return sv.SolverConfig(**cfg)

    def artifact(self, relpath: str) -> str | None:
        """Absolute path for an output file (directories created), or None without --out."""
        if self.out is None:
            return None
        path = os.path.join(self.out, relpath)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        self.manifest.append(relpath)
        return path


@dataclass(frozen=True)
class Scenario:
    id: str
    description: str
    anchor: str
    tags: tuple
    defaults: dict
    build: Callable


def skipped(name: str, reason: str) -> Report:
    return Report(name, {}, {"reason": reason}, "skipped")


def _solve(problem, init, ctx, **defaults):
    """Solve and return ``(solution, log, failure_reason)``."""
    try:
        sol, log = sv.solve(problem, init, ctx.solver_config(**defaults))
    except StepFailure as exc:
        return None, exc.log, f"solver step failure: {exc}"
    if not log.converged:
        return sol, log, f"solver did not converge (residual {log.residual[-1]:.3g})"
    return sol, log, None


def _solve_report(name, log, reason, inputs) -> Report:
    metrics = {"reason": reason} if reason else {}
    if log is not None:
        metrics.update({"iterations": log.iterations[-1], "residual": log.residual[-1],
                        "energy": log.energy[-1], "energy_monotone": log.energy_monotone(),
                        "converged": log.converged})
    rows = [] if log is None else [{"iteration": i, "residual": r, "energy": e, "step": s}
                                   for i, r, e, s in zip(log.iterations, log.residual, log.energy, log.step)]
    return Report(name, inputs, metrics, "skipped" if reason else "pass", {}, rows)


def _save_fields(ctx, sol, tag):
    path = ctx.artifact(f"fields/{tag}/checkpoint.json")
    if path is None:
        return
    d = os.path.dirname(path)
    sv.save_checkpoint(d, sol, 0)
    for i in range(sol.n):
        ctx.manifest.append(f"fields/{tag}/u{i}.csv")


def _with_solution(sol, reason, tasks):
    """Replace solution-dependent tasks by skipped reports when the solve failed."""
    if reason is None:
        return tasks
    return [Task(t.name, (lambda n=t.name: skipped(n, reason)), t.expected) for t in tasks]


# ---------------------------------------------------------------------------
# Shared diagnostic tasks
# ---------------------------------------------------------------------------

def _stability_task(problem, sol, ctx, name="stability"):
    def run():
        r = dg.stability_lambda_min(problem, sol, tol=ctx.tol(name))
        return r.to_report({"problem": problem.name}, name)
    return Task(name, run)


def _monotone_task(problem, sol, ctx, name="monotonicity"):
    def run():
        r = dg.check_F_monotone(problem, sol, eps_mono=ctx.tol(name))
        return r.to_report({"problem": problem.name}, name)
    return Task(name, run)


def _sign_task(problem, sol, ctx, name="sign-hypothesis"):
    def run():
        theta = [fl.ScalarField(problem.grid, sol.grad(i, "fd")[..., -1]) for i in range(problem.n)]
        r = dg.check_sign_hypothesis(problem, sol, theta, tol=ctx.tol(name, 1e-12))
        return r.to_report({"problem": problem.name, "theta": "last y-derivative"}, name)
    return Task(name, run)


def _poincare_task(problem, sol, ctx, n_psi, name="poincare"):
    def run():
        st = dg.stability_lambda_min(problem, sol)
        rng = ctx.rng(name)
        rows, verdicts = [], []
        for k in range(n_psi):
            psi = dg.random_test_tuple(rng, problem.grid, problem.n)
            r = dg.poincare_gap(problem, sol, psi, mode="fd", stable=st.stable, tol=ctx.tol(name))
            rows.append({"sample": k, "gap": r.gap, "tol": r.tol, "lhs": sum(r.lhs), "rhs": sum(r.rhs),
                         "cross": r.cross, "verdict": r.verdict})
            verdicts.append(r.verdict)
        if "fail" in verdicts:
            verdict = "fail"
        elif "hypothesis-not-met" in verdicts:
            verdict = "hypothesis-not-met"
        else:
            verdict = "pass"
        gaps = [row["gap"] for row in rows]
        return Report(name, {"problem": problem.name, "n_psi": n_psi},
                      {"min_gap": min(gaps), "max_gap": max(gaps), "lambda_min": st.lambda_min, "stable": st.stable},
                      verdict, {"tol_pq": rows[0]["tol"]}, rows)
    return Task(name, run)


def _symmetry_task(sol, ctx, name="symmetry"):
    def run():
        r = dg.symmetry_residual(sol, angle_tol=ctx.tol(name))
        return r.to_report({}, name)
    return Task(name, run)


def _alignment_task(problem, sol, ctx, name="direction-alignment"):
    def run():
        return dg.direction_alignment(problem, sol, tol=ctx.tol(name)).to_report({}, name)
    return Task(name, run)


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

def build_blwz_1d(params, ctx):
    h = params["h"] / ctx.grid_scale
    prof = sv.blwz_profile_1d(params["L"], h, tuple(params["slopes"]))
    inputs = {"L": params["L"], "h": h, "slopes": params["slopes"]}
    path = ctx.artifact("blwz_profile.csv")
    if path:
        write_rows(path, [{"t": t, "u": u, "v": v} for t, u, v in zip(prof.t, prof.u, prof.v)])

    def profile_report():
        d = prof.to_dict()
        ok = (d["residual"] <= 1e-8 and d["reflection_defect"] <= params["reflection_tol"]
              and d["monotone"] and d["nonnegative"])
        return Report("blwz-profile", inputs, d, "skipped" if prof.trivial else ("pass" if ok else "fail"),
                      {"residual": 1e-8, "reflection_defect": params["reflection_tol"]})

    def growth_report():
        g = dg.profile_growth_exponent(prof)
        lo, hi = params["alpha_range"]
        verdict = "skipped" if g.trivial else ("pass" if lo <= g.alpha <= hi else "fail")
        rep = g.to_report(inputs, "growth-exponent")
        rep.verdict = verdict
        rep.tolerances = {"alpha_range": [lo, hi]}
        return rep

    return [Task("blwz-profile", profile_report), Task("growth-exponent", growth_report)]


def _blwz_2d(params, ctx):
    """Solved BLWZ pair on a strip: Neumann in x, profile Dirichlet data in y."""
    prof = sv.blwz_profile_1d(30.0, 0.02, (1.0, 1.0))
    pu, pv = prof.profiles()
    X, Y = params["x_half"], params["y_half"]
    g = fl.make_grid([(-X, X), (-Y, Y)], [ctx.nodes(params["nodes"][0]), ctx.nodes(params["nodes"][1])], 1,
                     ("neumann", "dirichlet"))
    fu = sv.extend_1d_to_nd(pu, [1.0], g)
    fv = sv.extend_1d_to_nd(pv, [1.0], g)
    pert = sv.smooth_perturbation(g, seed=ctx.seed, amplitude=params["perturbation"])
    problem = md.Problem([md.constant_coefficient()] * 2, md.blwz_potential(), g, name="blwz-2d-fibered")
    init = md.SolutionTuple([fl.ScalarField(g, fu.values + pert), fl.ScalarField(g, fv.values - pert)])
    return problem, init, md.SolutionTuple([fu, fv])


def build_blwz_2d(params, ctx):
    problem, init, extension = _blwz_2d(params, ctx)
    sol, log, reason = _solve(problem, init, ctx, residual_tol=1e-10)
    inputs = {"grid": problem.grid.to_dict(), "seed": ctx.seed}
    tasks = [Task("solve", lambda: _solve_report("solve", log, reason, inputs))]
    if sol is not None and reason is None:
        _save_fields(ctx, sol, "blwz-2d")

    def derived():
        rng = ctx.rng("derived-residual")
        rows = []
        for k in range(params["n_psi_derived"]):
            psi = dg.random_test_tuple(rng, problem.grid, 2)
            w = md.weak_residual(problem, sol, psi, quadrature="nodal")
            d = md.derived_residual(problem, sol, 0, psi)
            rows.append({"sample": k, "weak": float(np.max(np.abs(w))), "derived": float(np.max(np.abs(d.residuals)))})
        scale = max(r["weak"] for r in rows)
        worst = max(r["derived"] for r in rows)
        factor = ctx.tol("derived-residual", 10.0)
        return Report("derived-residual", {"n_psi": params["n_psi_derived"]},
                      {"weak_scale": scale, "max_derived": worst, "ratio": worst / scale if scale else float("inf")},
                      "pass" if worst <= factor * scale else "fail", {"factor": factor}, rows)

    def forms():
        rng = ctx.rng("poincare-forms")
        diffs = []
        for _ in range(params["n_psi_forms"]):
            psi = dg.random_test_tuple(rng, problem.grid, 2)
            r = dg.poincare_geometric_form(problem, extension, psi, mode="analytic")
            diffs.append(r.form_difference)
        tol = ctx.tol("poincare-forms", 1e-8)
        return Report("poincare-forms", {"n_psi": len(diffs)}, {"max_difference": max(diffs)},
                      "pass" if max(diffs) <= tol else "fail", {"tol": tol})

    dependent = [
        _monotone_task(problem, sol, ctx),
        _sign_task(problem, sol, ctx),
        _stability_task(problem, sol, ctx),
        _poincare_task(problem, sol, ctx, params["n_psi"]),
        Task("derived-residual", derived),
        _symmetry_task(sol, ctx),
        _alignment_task(problem, sol, ctx),
    ]
    return tasks + _with_solution(sol, reason, dependent) + [Task("poincare-forms", forms)]


def build_allen_cahn(params, ctx):
    X, Y = params["x_half"], params["y_half"]
    g = fl.make_grid([(-X, X), (-Y, Y)], [ctx.nodes(params["nodes"][0]), ctx.nodes(params["nodes"][1])], 1,
                     ("neumann", "dirichlet"))
    problem = md.Problem([md.constant_coefficient()], md.allen_cahn_potential(), g, name="allen-cahn-kink")
    y = g.points()[..., 1]
    init = md.SolutionTuple([fl.ScalarField(g, np.clip(y / 3.0, -1.0, 1.0))])
    sol, log, reason = _solve(problem, init, ctx, residual_tol=1e-10)
    inputs = {"grid": g.to_dict()}
    tasks = [Task("solve", lambda: _solve_report("solve", log, reason, inputs))]
    if reason is None:
        _save_fields(ctx, sol, "allen-cahn")

    def kink_error():
        err = float(np.max(np.abs(sol[0].values - np.tanh(y / np.sqrt(2.0)))))
        tol = ctx.tol("kink-error", 10 * g.h_max ** 2)
        return Report("kink-error", inputs, {"max_error": err}, "pass" if err <= tol else "fail", {"tol": tol})

    def gradient_flow():
        cfg = sv.SolverConfig(scheme="gradient-flow", step=0.5, residual_tol=1e-9, max_iterations=400)
        try:
            s2, log2 = sv.solve(problem, init, cfg)
        except StepFailure as exc:
            return skipped("gradient-flow", str(exc))
        diff = float(np.max(np.abs(s2[0].values - sol[0].values)))
        ok = log2.converged and log2.energy_monotone() and diff <= 1e-6
        return Report("gradient-flow", inputs, {"iterations": log2.iterations[-1], "energy_monotone": log2.energy_monotone(),
                                                "converged": log2.converged, "difference_to_newton": diff},
                      "pass" if ok else "fail", {"difference": 1e-6})

    dependent = [
        Task("kink-error", kink_error),
        Task("gradient-flow", gradient_flow),
        _monotone_task(problem, sol, ctx),
        _stability_task(problem, sol, ctx),
        _poincare_task(problem, sol, ctx, params["n_psi"]),
        _symmetry_task(sol, ctx),
    ]
    return tasks + _with_solution(sol, reason, dependent)


def build_p_laplacian(params, ctx):
    p1, p2 = params["p"]
    X, Y = params["x_half"], params["y_half"]
    g = fl.make_grid([(-X, X), (-Y, Y)], [ctx.nodes(params["nodes"][0]), ctx.nodes(params["nodes"][1])], 1,
                     ("neumann", "dirichlet"))
    # scale = p makes the energy density exactly |grad u|^p
    coefs = [md.p_power_coefficient(p1, p1), md.p_power_coefficient(p2, p2)]
    problem = md.Problem(coefs, md.ginzburg_landau_potential(2), g, name="p-laplacian-minimizer")
    y = g.points()[..., 1]
    th = 0.25 * np.pi * (1 + y / Y)
    pert = sv.smooth_perturbation(g, seed=ctx.seed, amplitude=params["perturbation"])
    init = md.SolutionTuple([fl.ScalarField(g, np.cos(th) + pert), fl.ScalarField(g, np.sin(th) - pert)])
    sol, log, reason = _solve(problem, init, ctx, residual_tol=1e-9, max_iterations=100)
    inputs = {"grid": g.to_dict(), "p": [p1, p2], "seed": ctx.seed}
    tasks = [Task("solve", lambda: _solve_report("solve", log, reason, inputs))]
    if reason is None:
        _save_fields(ctx, sol, "p-laplacian")

    def audit():
        a = md.minimizer_conditions_audit(problem, {"seed": ctx.seed})
        return Report("minimizer-conditions", inputs, a.to_dict(), "pass" if a.passed else "fail")

    def density():
        dens = sum(np.linalg.norm(sol.grad(i, "fd"), axis=-1) ** p for i, p in enumerate((p1, p2)))
        return Report("energy-density", inputs, {"max_density": float(np.max(dens)),
                                                 "max_abs_u": sol.bounds()["max_abs_u"]}, "pass")

    dependent = [
        _monotone_task(problem, sol, ctx),
        _stability_task(problem, sol, ctx),
        _poincare_task(problem, sol, ctx, params["n_psi"]),
        Task("energy-density", density),
        _symmetry_task(sol, ctx),
        _alignment_task(problem, sol, ctx),
    ]
    return tasks + [Task("minimizer-conditions", audit)] + _with_solution(sol, reason, dependent)


def build_abg(params, ctx):
    # a tuple whose image crosses the line x1 = 1 where F_12 changes sign
    g = fl.make_grid([(0.0, 1.0), (0.0, 1.0)], [ctx.nodes(params["nodes"]), ctx.nodes(params["nodes"])], 1)
    pts = g.points()
    lo, hi = params["x1_range"]
    u1 = lo + (hi - lo) * pts[..., 1]
    u2 = params["x2_value"] + 0.25 * pts[..., 0]
    problem = md.Problem([md.constant_coefficient()] * 2, md.abg_potential(), g, name="abg-counterexample")
    sol = md.SolutionTuple([fl.ScalarField(g, u1), fl.ScalarField(g, u2)])

    def audit():
        a = dg.abg_audit()
        return a.to_report({}, "abg-audit")

    def sign_task(signs):
        name = f"sign-hypothesis[{signs[0]:+d},{signs[1]:+d}]"

        def run():
            theta = [np.full(g.shape, float(s)) for s in signs]
            r = dg.check_sign_hypothesis(problem, sol, theta)
            return r.to_report({"signs": list(signs), "x1_range": [lo, hi]}, name)
        return Task(name, run, expected="fail")

    return [Task("abg-audit", audit)] + [sign_task(s) for s in ((1, 1), (1, -1))]


def build_manufactured_identity(params, ctx):
    shapes = [tuple(s) for s in params["shapes"]]
    coefs = [md.constant_coefficient()] + [md.p_power_coefficient(p) for p in params["p"]]

    def identities():
        rng = ctx.rng("identities")
        rows = []
        for N, m in shapes:
            g = fl.make_grid([(-1, 1)] * N, [ctx.nodes(9)] * N, m)
            for coef in coefs:
                for k in range(params["n_fields"]):
                    f = fl.sample(fl.random_smooth_field(rng, N), g)
                    r = geo.identity_check(f, coef, "analytic")
                    rows.append({"N": N, "m": m, "coefficient": coef.label, "sample": k,
                                 "sup_i": r.sup_i, "sup_ii": r.sup_ii, "active_nodes": r.active_nodes})
        worst = max(max(r["sup_i"], r["sup_ii"]) for r in rows)
        tol = ctx.tol("identities", 1e-8)
        return Report("identities", {"shapes": shapes, "n_fields": params["n_fields"]}, {"max_residual": worst},
                      "pass" if worst <= tol else "fail", {"tol": tol}, rows)

    def nonnegativity():
        rng = ctx.rng("nonnegativity")
        worst = 0.0
        for N, m in shapes:
            g = fl.make_grid([(-1, 1)] * N, [7] * N, m)
            for _ in range(params["n_fields"]):
                b = geo.compute_STU(fl.sample(fl.random_smooth_field(rng, N), g), "analytic")
                neg = b.negativity()
                worst = min(worst, neg["S"], neg["T"])
        tol = ctx.tol("nonnegativity", 1e-10)
        return Report("nonnegativity", {"shapes": shapes}, {"min_S_T": worst},
                      "pass" if worst >= -tol else "fail", {"tol": tol})

    def refinement():
        rng = ctx.rng("fd-refinement")
        rows = []
        for N, m in shapes:
            af = fl.random_smooth_field(rng, N)
            g = fl.make_grid([(-1, 1)] * N, [ctx.nodes(17)] * N, m)
            study = geo.fd_refinement_study(af, g, md.p_power_coefficient(3.0))
            for key in ("i", "ii"):
                rows.append({"N": N, "m": m, "identity": key, **study[key]})
        orders = [r["order"] for r in rows if not r["exact"]]
        ok = all(o >= 1.8 for o in orders)
        return Report("fd-refinement", {"shapes": shapes}, {"min_order": min(orders) if orders else None},
                      "pass" if ok else "fail", {"min_order": 1.8}, rows)

    def curvature():
        g = fl.make_grid([(-1, 1), (-2, 2), (-2, 2), (-2, 2)], [5, 21, 21, 21], 1)
        f = fl.sample(fl.quadratic_field(np.diag([0.0, 1.0, 1.0, 1.0])), g)
        K = geo.curvature_length(f, "analytic")
        r = np.linalg.norm(g.points()[..., 1:], axis=-1)
        mk = np.isfinite(K) & (r > 0.5)
        err = float(np.max(np.abs(K[mk] * r[mk] / np.sqrt(2.0) - 1.0)))
        return Report("sphere-curvature", {}, {"max_relative_error": err}, "pass" if err <= 0.01 else "fail",
                      {"relative": 0.01})

    return [Task("identities", identities), Task("nonnegativity", nonnegativity),
            Task("fd-refinement", refinement), Task("sphere-curvature", curvature)]


def build_growth_and_cutoff(params, ctx):
    coef = md.constant_coefficient()
    probe = fl.make_grid([(-1, 1), (-1, 1)], [5, 5], 1)
    kink = sv.extend_1d_to_nd(sv.tanh_profile(), [1.0], probe).analytic
    linear = fl.affine_field([0.0, 1.0])
    R_list = params["R_list"]

    def cutoff():
        R = params["cutoff_R"]
        L = R + 2
        g = fl.make_grid([(-L, L), (-L, L)], [ctx.nodes(params["cutoff_nodes"])] * 2, 1)
        c = dg.log_cutoff(R, g, [1, -1])
        # on the annulus |grad eta| = 2/(|X| log R) exactly, so the ratio is 4
        ok = abs(c.max_ratio - 4.0) <= 1e-9 and c.contained
        return Report("log-cutoff", {"R": R}, {"max_ratio": c.max_ratio, "closed_form_ratio": 4.0,
                                               "bound_one_holds": c.unit_bound_holds, "contained": c.contained,
                                               "notes": c.notes}, "pass" if ok else "fail", {"ratio": 1e-9})

    def decay_linear():
        r = dg.cutoff_decay_polar([linear], [coef], R_list)
        rep = r.to_report({"field": "u = y", "R": R_list}, "cutoff-decay")
        rep.metrics["closed_form"] = np.pi / 4
        return rep

    def decay_kink():
        r = dg.cutoff_decay_polar([kink], [coef], R_list)
        v = np.asarray(r.value_log_R)
        bounded = bool(np.all(v <= 2 * v[0]))
        rep = r.to_report({"field": "tanh kink", "R": R_list}, "cutoff-decay-kink")
        rep.metrics["bounded_by_first"] = bounded
        rep.verdict = "pass" if bounded else "fail"
        return rep

    def decay_violating():
        q = fl.quadratic_field(np.diag([0.0, 1.0]))
        r = dg.cutoff_decay_polar([q], [coef], R_list)
        grows = bool(np.all(np.diff(r.value_log_R) > 0))
        rep = r.to_report({"field": "u = y^2/2"}, "cutoff-decay-violating")
        rep.metrics["grows"] = grows
        rep.verdict = "hypothesis-not-met" if grows else "fail"
        return rep

    def lemma():
        rows = []
        for label, h in (("h=1", lambda rho, th: np.ones_like(th)),
                         ("kink", dg.polar_density([kink], [coef]))):
            for R in params["lemma_R"]:
                rows.append({"integrand": label, **dg.annulus_lemma_polar(h, R)})
        ok = all(r["holds"] for r in rows)
        return Report("annulus-lemma", {"R": params["lemma_R"]}, {"min_margin": min(r["margin"] for r in rows)},
                      "pass" if ok else "fail", {}, rows)

    def growth():
        L = params["growth_box"]
        g = fl.make_grid([(-L, L), (-L, L)], [ctx.nodes(params["growth_nodes"])] * 2, 1)
        problem = md.Problem([coef], md.allen_cahn_potential(), g, name="kink-growth")
        sol = md.SolutionTuple([fl.sample(kink, g)])
        radii = list(np.linspace(0.2 * L, 0.95 * L, 8))
        r = dg.growth_check(problem, sol, radii)
        return r.to_report({"box": L}, "growth")

    return [Task("log-cutoff", cutoff), Task("cutoff-decay", decay_linear),
            Task("cutoff-decay-kink", decay_kink),
            Task("cutoff-decay-violating", decay_violating, expected="hypothesis-not-met"),
            Task("annulus-lemma", lemma), Task("growth", growth)]


REGISTRY = {s.id: s for s in [
    Scenario("blwz-1d", "1D phase-separation pair: profile, reflection symmetry and linear growth",
             "two-component system u'' = u v^2, v'' = v u^2", ("blwz", "1d"),
             {"L": 30.0, "h": 0.02, "slopes": [1.0, 1.0], "reflection_tol": 1e-3, "alpha_range": [0.9, 1.1]},
             build_blwz_1d),
    Scenario("blwz-2d-fibered", "BLWZ pair solved on a strip with one x-axis; stability and Poincare audits",
             "quasilinear system with m = 1, phase-separation coupling", ("blwz", "fibered", "stability"),
             {"x_half": 4.0, "y_half": 5.0, "nodes": [41, 101], "perturbation": 0.2, "n_psi": 100,
              "n_psi_derived": 20, "n_psi_forms": 10},
             build_blwz_2d),
    Scenario("allen-cahn-kink", "Allen-Cahn kink on a strip; tanh comparison, stability and gradient flow",
             "scalar equation -Delta u = u - u^3", ("scalar", "stability"),
             {"x_half": 2.0, "y_half": 8.0, "nodes": [21, 161], "n_psi": 100},
             build_allen_cahn),
    Scenario("p-laplacian-minimizer", "p-Laplacian pair with a Ginzburg-Landau well; minimizer growth conditions",
             "energy |grad u1|^p1 + |grad u2|^p2 - F(u1, u2)", ("appendix", "p-laplacian"),
             {"p": [2.5, 2.25], "x_half": 2.0, "y_half": 3.0, "nodes": [21, 61], "perturbation": 0.05,
              "n_psi": 100},
             build_p_laplacian),
    Scenario("abg-counterexample", "double-well potential whose coupling term changes sign",
             "F = (x1-1)^2 x2^2 + (x2^2-1)^2", ("appendix", "counterexample"),
             {"nodes": 21, "x1_range": [0.0, 2.0], "x2_value": 0.75},
             build_abg),
    Scenario("manufactured-identity", "level-set identities on random closed-form fields",
             "identities relating the flux-matrix form to S, T, K and the tangential gradient", ("geometry",),
             {"shapes": [[2, 1], [3, 1], [3, 2]], "p": [2.5, 3.0], "n_fields": 6},
             build_manufactured_identity),
    Scenario("growth-and-cutoff", "energy growth, annulus lemma and logarithmic cutoff decay",
             "capacity argument with the logarithmic cutoff", ("growth",),
             {"R_list": [1e2, 1e3, 1e4], "cutoff_R": 20.0, "cutoff_nodes": 201, "lemma_R": [100.0, 1000.0],
              "growth_box": 20.0, "growth_nodes": 161},
             build_growth_and_cutoff),
]}


def list_scenarios(tag: str | None = None) -> list:
    return [s for s in REGISTRY.values() if tag is None or tag in s.tags]


def _same_kind(default, value) -> bool:
    """Overrides keep the kind of the default: numbers for numbers, lists of the same element kind."""
    if isinstance(default, bool) or isinstance(value, bool):
        return isinstance(default, bool) and isinstance(value, bool)
    if isinstance(default, (int, float)):
        return isinstance(value, (int, float))
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            return False
        return bool(value) and all(_same_kind(default[0], v) for v in value) if default else True
    return isinstance(value, type(default))


def resolve_params(scenario: Scenario, overrides: dict | None) -> dict:
    params = dict(scenario.defaults)
    for k, v in (overrides or {}).items():
        if k not in params:
            raise ConfigError(f"unknown parameter for scenario {scenario.id!r}", f"/params/{k}")
        if not _same_kind(params[k], v):
            raise ConfigError(f"expected a value shaped like {params[k]!r}, got {v!r}", f"/params/{k}")
        params[k] = v
    return params


def build(scenario_id: str, params: dict | None, ctx: Context) -> list:
    scenario = REGISTRY[scenario_id]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return scenario.build(resolve_params(scenario, params), ctx)

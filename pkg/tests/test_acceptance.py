"""Acceptance criteria, one test each, at their stated tolerances.

Every test records a single ``ACCEPTANCE k: PASS|FAIL`` line (collected in
the terminal summary) before asserting.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

from fibered import diagnostics as dg
from fibered import fields as fl
from fibered import geometry as geo
from fibered import model as md
from fibered import scenarios as sc
from fibered import solver as sv

SHAPES = [(2, 1), (3, 1), (3, 2)]
COEFS = [md.constant_coefficient(), md.p_power_coefficient(2.5), md.p_power_coefficient(3.0)]


def _tasks(scenario_id, seed=0):
    return {t.name: t for t in sc.build(scenario_id, None, sc.Context(seed=seed))}


@pytest.fixture(scope="module")
def blwz_tasks():
    return _tasks("blwz-2d-fibered")


def test_geometric_identities(acceptance):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst, orders = 0.0, []
    for k in range(50):
        N, m = SHAPES[k % 3]
        af = fl.random_smooth_field(rng, N)
        g = fl.make_grid([(-1, 1)] * N, [9] * N, m)
        f = fl.sample(af, g)
        for coef in COEFS:
            r = geo.identity_check(f, coef, "analytic")
            worst = max(worst, r.sup_i, r.sup_ii)
        study = geo.fd_refinement_study(af, fl.make_grid([(-1, 1)] * N, [17] * N, m), COEFS[k // 3 % 3])
        orders += [study[key]["order"] for key in ("i", "ii") if not study[key]["exact"]]
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and min(orders) >= 1.8 and elapsed <= 120
    acceptance(1, ok, f"max analytic residual {worst:.2e} (<= 1e-8); min fd order {min(orders):.3f} (>= 1.8) "
                      f"over {len(orders)} refinements; {elapsed:.1f}s (<= 120s)")
    assert ok


def test_nonnegativity(acceptance):
    rng = np.random.default_rng(202)
    worst = np.inf
    for k in range(1000):
        N, m = SHAPES[k % 3]
        g = fl.make_grid([(-1, 1)] * N, [7] * N, m)
        neg = geo.compute_STU(fl.sample(fl.random_smooth_field(rng, N), g), "analytic").negativity()
        worst = min(worst, neg["S"], neg["T"])
    ok = worst >= -1e-10
    acceptance(2, ok, f"min of S, T over 1000 fields = {worst:.2e} (>= -1e-10)")
    assert ok


def test_derived_system(acceptance, blwz_tasks):
    rep = blwz_tasks["derived-residual"].fn()
    m = rep.metrics
    ok = rep.verdict == "pass" and m["max_derived"] <= 10 * m["weak_scale"] and len(rep.rows) == 20
    acceptance(3, ok, f"max derived residual {m['max_derived']:.3e} <= 10 x weak scale {m['weak_scale']:.3e} "
                      f"(ratio {m['ratio']:.3f}, 20 psi)")
    assert ok


def test_monotone_implies_stable(acceptance, blwz_tasks):
    mono = blwz_tasks["monotonicity"].fn()
    stab = blwz_tasks["stability"].fn()
    lam, tol = stab.metrics["lambda_min"], stab.tolerances["tol_stab"]
    g = fl.make_grid([(0, 1), (0, 1)], [5, 257], 1, ("neumann", "dirichlet"))
    problem = md.Problem([md.constant_coefficient()], md.quadratic_potential(-np.eye(1)), g)
    oracle = dg.stability_lambda_min(problem, md.SolutionTuple([fl.ScalarField(g, np.zeros(g.shape))])).lambda_min
    rel = abs(oracle - (np.pi ** 2 + 1)) / (np.pi ** 2 + 1)
    ok = mono.verdict == "pass" and lam >= -tol and rel <= 0.01
    acceptance(4, ok, f"F-monotone {mono.verdict}; lambda_min {lam:.4g} >= -tol_stab {-tol:.3g}; "
                      f"interval oracle {oracle:.6f} vs pi^2+1 = {np.pi ** 2 + 1:.6f} (rel {rel:.1e} <= 1e-2)")
    assert ok


def test_poincare_inequality(acceptance, blwz_tasks):
    parts, ok = [], True
    runs = [("blwz-2d-fibered", blwz_tasks["poincare"])]
    for sid in ("allen-cahn-kink", "p-laplacian-minimizer"):
        runs.append((sid, _tasks(sid)["poincare"]))
    for sid, task in runs:
        rep = task.fn()
        good = rep.verdict == "pass" and rep.metrics["stable"] and len(rep.rows) == 100
        ok &= good
        parts.append(f"{sid} min gap {rep.metrics['min_gap']:.3g} (tol {rep.tolerances['tol_pq']:.2g})")
    forms = blwz_tasks["poincare-forms"].fn()
    worst = forms.metrics["max_difference"]
    rng = np.random.default_rng(505)
    for k in range(30):
        N, m = SHAPES[k % 3]
        g = fl.make_grid([(-1, 1)] * N, [9] * N, m)
        problem = md.Problem([COEFS[k // 3 % 3]], md.allen_cahn_potential(), g)
        sol = md.SolutionTuple([fl.sample(fl.random_smooth_field(rng, N), g)])
        r = dg.poincare_geometric_form(problem, sol, dg.random_test_tuple(rng, g, 1), mode="analytic")
        worst = max(worst, r.form_difference)
    ok &= worst <= 1e-8
    acceptance(5, ok, "; ".join(parts) + f"; max form difference {worst:.2e} (<= 1e-8)")
    assert ok


def test_blwz_one_dimensional(acceptance):
    tasks = _tasks("blwz-1d")
    prof = tasks["blwz-profile"].fn()
    growth = tasks["growth-exponent"].fn()
    defect, alpha = prof.metrics["reflection_defect"], growth.metrics["alpha"]
    ok = defect <= 1e-3 and 0.9 <= alpha <= 1.1 and prof.inputs["L"] == 30.0 and prof.inputs["h"] == 0.02
    acceptance(6, ok, f"reflection defect {defect:.2e} (<= 1e-3); alpha {alpha:.4f} in [0.9, 1.1]")
    assert ok


def test_symmetry_residual(acceptance):
    rng = np.random.default_rng(707)
    prof = sv.blwz_profile_1d(30.0, 0.02, (1.0, 1.0))
    profiles = [sv.tanh_profile(), sv.linear_profile(0.7, 0.1), prof.profiles()[0], prof.profiles()[1]]
    supK, angle = 0.0, 0.0
    for N, m in [(2, 1), (3, 1), (4, 1), (4, 2)]:
        g = fl.make_grid([(-1, 1)] * m + [(-3, 3)] * (N - m), [9] * N, m)
        for p in profiles:
            w = rng.normal(size=N - m)
            rep = dg.symmetry_residual(md.SolutionTuple([sv.extend_1d_to_nd(p, w / np.linalg.norm(w), g)]),
                                       mode="analytic")
            c = rep.components[0]
            supK, angle = max(supK, c.sup_K), max(angle, c.max_angular_deviation)
    rel = 0.0
    for N, m in [(3, 1), (4, 1), (5, 2)]:
        g = fl.make_grid([(-1, 1)] * m + [(-2, 2)] * (N - m), [5] * m + [17] * (N - m), m)
        u = fl.sample(fl.quadratic_field(np.diag([0.0] * m + [2.0] * (N - m))), g)
        r = np.linalg.norm(g.points()[..., m:], axis=-1)
        mid = (r >= 0.75) & (r <= 1.25)
        for mode in ("analytic", "fd"):
            K = geo.curvature_length(fl.ScalarField(g, u.values, u.analytic if mode == "analytic" else None), mode)
            rel = max(rel, float(np.max(np.abs(K[mid] * r[mid] / np.sqrt(N - m - 1) - 1))))
    ok = supK <= 1e-8 and angle <= 1e-10 and rel <= 0.01
    acceptance(7, ok, f"extended fields: sup K {supK:.1e} (<= 1e-8), angle {angle:.1e} (<= 1e-10); "
                      f"radial K vs sqrt(N-m-1)/r rel err {rel:.1e} (<= 1e-2)")
    assert ok


def test_cutoff_decay(acceptance):
    tasks = _tasks("growth-and-cutoff")
    lin = tasks["cutoff-decay"].fn()
    kink = tasks["cutoff-decay-kink"].fn()
    lemma = tasks["annulus-lemma"].fn()
    vl = [row["value_log_R"] for row in lin.rows]
    kv = [row["value_log_R"] for row in kink.rows]
    ok = lin.metrics["spread"] <= 2 and lemma.verdict == "pass" and [r["R"] for r in lin.rows] == [1e2, 1e3, 1e4]
    margins = ", ".join(f"{r['integrand']} R={r['R']:g}: {r['margin']:.3g}" for r in lemma.rows)
    acceptance(8, ok, f"u = y: value*log R = {vl[0]:.6f}..{vl[-1]:.6f}, spread {lin.metrics['spread']:.3f} (<= 2); "
                      f"kink: {kv[0]:.3e} -> {kv[-1]:.3e} (bounded by first: {kink.metrics['bounded_by_first']}); "
                      f"lemma margins {margins}")
    assert ok


def test_abg_counterexample(acceptance):
    tasks = _tasks("abg-counterexample")
    audit = tasks["abg-audit"].fn()
    m = audit.metrics
    signs = {name: tasks[name].fn().verdict for name in ("sign-hypothesis[+1,+1]", "sign-hypothesis[+1,-1]")}
    ok = (m["values_at_minima"] == [0.0, 0.0] and m["min_eigenvalues"] == [2.0, 2.0]
          and m["F12_witness"][0]["F12"] < 0 < m["F12_witness"][1]["F12"]
          and audit.verdict == "pass" and set(signs.values()) == {"fail"})
    acceptance(9, ok, f"F at minima {m['values_at_minima']}; min Hessian eigenvalues {m['min_eigenvalues']}; "
                      f"F12 witnesses {[w['F12'] for w in m['F12_witness']]}; sign checks {signs}")
    assert ok


def _random_problem(rng, k):
    g = fl.make_grid([(-1, 1), (-1.5, 1.5)], [9 + 2 * (k % 3), 13], 1, ("neumann", "dirichlet"))
    y = g.points()[..., 1]
    choice = k % 4
    if choice == 0:
        problem = md.Problem([md.constant_coefficient()] * 2, md.blwz_potential(), g)
    elif choice == 1:
        problem = md.Problem([md.constant_coefficient()], md.allen_cahn_potential(), g)
    elif choice == 2:
        problem = md.Problem([md.p_power_coefficient(2.5, 2.5), md.p_power_coefficient(3.0)],
                             md.ginzburg_landau_potential(2), g)
    else:
        problem = md.Problem([md.p_power_coefficient(3.0), md.constant_coefficient()],
                             md.coupled_double_well_potential(0.5), g)
    fields = []
    for _ in range(problem.n):
        v = fl.sample(fl.random_smooth_field(rng, 2, scale=0.7), g).values
        fields.append(fl.ScalarField(g, v + 0.5 * y))
    return problem, md.SolutionTuple(fields)


def test_energy_euler_lagrange(acceptance):
    rng = np.random.default_rng(1010)
    eps = 1e-5
    worst = 0.0
    for k in range(50):
        problem, sol = _random_problem(rng, k)
        g = problem.grid
        psi = dg.random_test_tuple(rng, g, problem.n)

        def shifted(s):
            return md.SolutionTuple([fl.ScalarField(g, sol[i].values + s * psi[i].values) for i in range(problem.n)])
        fd = (md.energy(problem, shifted(eps)) - md.energy(problem, shifted(-eps))) / (2 * eps)
        wr = float(np.sum(md.weak_residual(problem, sol, psi)))
        worst = max(worst, abs(fd - wr) / abs(wr))
    ok = worst <= 1e-6
    acceptance(10, ok, f"max relative |dE - weak residual| over 50 pairs = {worst:.2e} (<= 1e-6, eps = 1e-5)")
    assert ok


def test_determinism(acceptance, tmp_path):
    digests = []
    for run, threads in (("a", 1), ("b", 1), ("c", 4)):
        out = tmp_path / run
        proc = subprocess.run([sys.executable, "-m", "fibered", "run", "--scenario", "all", "--seed", "11",
                               "--threads", str(threads), "--out", str(out)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        digests.append(json.loads((out / "suite.json").read_text())["digest"])
    ok = len(set(digests)) == 1
    acceptance(11, ok, f"suite digests {[d[:12] for d in digests]} (threads 1, 1, 4)")
    assert ok

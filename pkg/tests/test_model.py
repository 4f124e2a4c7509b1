import numpy as np
import pytest
from scipy import integrate

from fibered import fields as fl
from fibered import model as md
from fibered import solver as sv
from fibered.errors import ConfigError, DegenerateGradientError


def _unit_vectors(rng, k, N):
    v = rng.normal(size=(k, N))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_constant_coefficient_gives_identity(rng):
    eta = rng.normal(size=(5, 3))
    A = md.assemble_A(md.constant_coefficient(), np.zeros((5, 1)), eta)
    np.testing.assert_allclose(A, np.broadcast_to(np.eye(3), (5, 3, 3)))


@pytest.mark.parametrize("p", [1.5, 2.5, 3.0, 4.0])
def test_p_power_spectrum(p, rng):
    eta = rng.normal(size=(6, 3))
    t = np.linalg.norm(eta, axis=-1)
    ev = np.linalg.eigvalsh(md.assemble_A(md.p_power_coefficient(p), np.zeros((6, 1)), eta))
    expect = np.sort(np.stack([t ** (p - 2), t ** (p - 2), (p - 1) * t ** (p - 2)], axis=-1), axis=-1)
    np.testing.assert_allclose(ev, expect, rtol=1e-12)


def test_p_equal_two_is_identity(rng):
    eta = rng.normal(size=(4, 2))
    A = md.assemble_A(md.p_power_coefficient(2.0), np.zeros((4, 1)), eta)
    np.testing.assert_allclose(A, np.broadcast_to(np.eye(2), (4, 2, 2)), atol=1e-15)


def test_degenerate_gradient_rejected():
    with pytest.raises(DegenerateGradientError):
        md.assemble_A(md.p_power_coefficient(3.0), np.zeros((1, 1)), np.zeros((1, 2)))


def test_largest_eigenvalue_examples():
    assert md.largest_eigenvalue(np.eye(3)) == pytest.approx(1.0)
    coef = md.p_power_coefficient(3.0)
    eta = np.array([[2.0, 0.0]])
    A = md.assemble_A(coef, np.zeros((1, 1)), eta)
    assert md.largest_eigenvalue(A)[0] == pytest.approx(4.0)
    assert md.largest_eigenvalue_closed(coef, np.zeros((1, 1)), eta)[0] == pytest.approx(4.0)
    # mildly decreasing a: the rank-one term lowers one eigenvalue only
    soft = md.p_power_coefficient(1.8)
    A = md.assemble_A(soft, np.zeros((1, 1)), np.array([[1.5, 0.5]]))
    assert md.largest_eigenvalue(A)[0] >= soft.lambda2(0, np.hypot(1.5, 0.5)) - 1e-14


def test_lambda_profiles_constant():
    t = np.linspace(0, 3, 7)
    l1, l2, L2 = md.lambda_profiles(md.constant_coefficient(), np.zeros((7, 1)), t)
    np.testing.assert_allclose(l1, 1)
    np.testing.assert_allclose(l2, 1)
    np.testing.assert_allclose(L2, t ** 2 / 2)


@pytest.mark.parametrize("p", [2.5, 3.0])
def test_lambda_profiles_p_power(p):
    t = np.linspace(0.1, 3, 9)
    coef = md.p_power_coefficient(p)
    l1, l2, L2 = md.lambda_profiles(coef, np.zeros((9, 1)), t)
    np.testing.assert_allclose(l1, (p - 1) * t ** (p - 2))
    np.testing.assert_allclose(l2, t ** (p - 2))
    np.testing.assert_allclose(L2, t ** p / p)
    # the closed form agrees with direct quadrature of a(tau) tau
    assert md.Lambda2_adaptive(coef, [0.0], 2.0) == pytest.approx(2.0 ** p / p, rel=1e-10)


@pytest.mark.parametrize("coef", [md.constant_coefficient(), md.p_power_coefficient(3.0),
                                  md.x_modulated_coefficient(2.5, lambda x: 1 + 0.1 * np.cos(x[..., 0]))])
def test_Lambda2_vanishes_at_zero(coef):
    assert coef.Lambda2(np.zeros(1), 0.0) == 0.0


def test_manufactured_sine_residual_second_order():
    # -u'' = pi^2 sin(pi y) with the source subtracted by hand
    errs = []
    for n in (33, 65):
        g = fl.make_grid([(0, 1), (0, 1)], [5, n], 1, ("neumann", "dirichlet"))
        y = g.points()[..., 1]
        pot = md.Potential(1, lambda x, xi: np.zeros(xi.shape[:-1]),
                           lambda x, xi: np.zeros(xi.shape), lambda x, xi: np.zeros(xi.shape + (1,)))
        src = np.pi ** 2 * np.sin(np.pi * y)
        problem = md.Problem([md.constant_coefficient()], pot, g)
        sol = md.SolutionTuple([fl.ScalarField(g, np.sin(np.pi * y))])
        r = md.strong_residual(problem, sol)[0] - src
        errs.append(np.max(np.abs(r[:, 1:-1])))
    assert np.log2(errs[0] / errs[1]) > 1.8


def test_constant_root_has_zero_residual():
    g = fl.make_grid([(0, 1), (0, 1)], 9, 1, ("neumann", "dirichlet"))
    problem = md.Problem([md.constant_coefficient()], md.allen_cahn_potential(), g)
    sol = md.SolutionTuple([fl.ScalarField(g, np.ones(g.shape))])
    assert md.residual_sup(problem, sol) == 0.0


def test_weak_residual_linear_and_zero(blwz_2d, rng):
    from fibered import diagnostics as dg
    problem, sol, _ = blwz_2d
    g = problem.grid
    zero = [np.zeros(g.shape)] * 2
    assert np.all(md.weak_residual(problem, sol, zero) == 0)
    a = dg.random_test_tuple(rng, g, 2)
    b = dg.random_test_tuple(rng, g, 2)
    both = [fl.ScalarField(g, a[i].values + b[i].values) for i in range(2)]
    np.testing.assert_allclose(md.weak_residual(problem, sol, both),
                               md.weak_residual(problem, sol, a) + md.weak_residual(problem, sol, b),
                               rtol=1e-10, atol=1e-14)


def test_derived_residual_constancy_direction():
    g = fl.make_grid([(-1, 1), (-3, 3), (-3, 3)], 13, 1)
    f = sv.extend_1d_to_nd(sv.tanh_profile(), [1.0, 0.0], g)
    problem = md.Problem([md.constant_coefficient()], md.allen_cahn_potential(), g)
    sol = md.SolutionTuple([f])
    psi = [fl.ScalarField(g, np.exp(-g.radius() ** 2) * g.interior_mask(1))]
    d = md.derived_residual(problem, sol, 1, psi, mode="analytic")
    assert np.max(np.abs(d.residuals)) < 1e-14


def test_zero_energy():
    g = fl.make_grid([(0, 1), (0, 1)], 9, 1)
    problem = md.Problem([md.constant_coefficient()] * 2, md.blwz_potential(), g)
    sol = md.SolutionTuple([fl.ScalarField(g, np.zeros(g.shape))] * 2)
    assert md.energy(problem, sol) == 0.0


def test_kink_energy_per_length():
    # 1/2 u'^2 and (1 - u^2)^2 / 4 both equal sech^4(s/sqrt 2) / 4
    oracle, _ = integrate.quad(lambda s: 0.5 / np.cosh(s / np.sqrt(2)) ** 4, -40, 40)
    assert oracle == pytest.approx(2 * np.sqrt(2) / 3, rel=1e-10)
    g = fl.make_grid([(0, 1), (-15, 15)], [5, 1201], 1, ("neumann", "dirichlet"))
    problem = md.Problem([md.constant_coefficient()], md.allen_cahn_potential(), g)
    sol = md.SolutionTuple([fl.ScalarField(g, np.tanh(g.points()[..., 1] / np.sqrt(2)))])
    assert md.energy(problem, sol) == pytest.approx(oracle, rel=1e-4)


def test_energy_derivative_matches_weak_residual(rng):
    from fibered import diagnostics as dg
    g = fl.make_grid([(-1, 1), (-2, 2)], [11, 21], 1, ("neumann", "dirichlet"))
    problem = md.Problem([md.p_power_coefficient(3.0), md.constant_coefficient()], md.blwz_potential(), g)
    sol = md.SolutionTuple([fl.ScalarField(g, 1.5 + np.sin(g.points()[..., 1])),
                            fl.ScalarField(g, 1.0 + 0.3 * g.points()[..., 0] ** 2)])
    psi = dg.random_test_tuple(rng, g, 2)
    eps = 1e-5

    def shifted(s):
        return md.SolutionTuple([fl.ScalarField(g, sol[i].values + s * psi[i].values) for i in range(2)])
    fd = (md.energy(problem, shifted(eps)) - md.energy(problem, shifted(-eps))) / (2 * eps)
    assert fd == pytest.approx(float(np.sum(md.weak_residual(problem, sol, psi))), rel=1e-6)


def test_minimizer_audit_p_power():
    g = fl.make_grid([(0, 1), (0, 1)], 5, 1)
    for p, C in ((1.5, 1.5), (2.5, 2.5 * 1.5)):
        problem = md.Problem([md.p_power_coefficient(p)] * 2, md.ginzburg_landau_potential(2), g)
        a = md.minimizer_conditions_audit(problem)
        assert a.passed
        assert a.constants["C[0]"] == pytest.approx(C, rel=1e-9)


def test_minimizer_audit_positive_potential_fails_sign():
    g = fl.make_grid([(0, 1), (0, 1)], 5, 1)
    problem = md.Problem([md.constant_coefficient()], md.constant_potential(1, 1.0), g)
    a = md.minimizer_conditions_audit(problem)
    assert not a.by_name("F-nonpositive").passed
    assert not a.by_name("F-zero-on-sphere").passed


def test_minimizer_audit_flags_sphere_values():
    g = fl.make_grid([(0, 1), (0, 1)], 5, 1)
    problem = md.Problem([md.constant_coefficient()] * 2, md.quadratic_potential(-np.eye(2)), g)
    a = md.minimizer_conditions_audit(problem)
    c = a.by_name("F-zero-on-sphere")
    assert not c.passed and c.value == pytest.approx(0.5)


PROBLEM_DOC = {
    "n": 2,
    "coefficients": [{"kind": "constant"}, {"kind": "p-power", "params": {"p": 3}}],
    "potential": {"kind": "blwz"},
    "grid": {"extents": [[-1, 1], [-2, 2]], "nodes": [9, 17], "m": 1, "boundary": ["neumann", "dirichlet"]},
}


def test_problem_document_roundtrip(tmp_path):
    import json
    path = tmp_path / "p.json"
    path.write_text(json.dumps(PROBLEM_DOC))
    problem = md.load_problem(path)
    assert problem.n == 2 and problem.grid.nodes == (9, 17)
    assert problem.coefficients[1].params["p"] == 3


@pytest.mark.parametrize("patch, pointer", [
    ({"n": 0}, "/n"),
    ({"potential": {"kind": "nope"}}, "/potential/kind"),
    ({"grid": {"extents": [[0, 1], [0, 1]], "nodes": 9, "m": 2}}, "/grid"),
    ({"n": 3}, "/coefficients"),
])
def test_problem_document_errors(patch, pointer):
    with pytest.raises(ConfigError) as exc:
        md.problem_from_dict({**PROBLEM_DOC, **patch})
    assert exc.value.path == pointer

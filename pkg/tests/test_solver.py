import warnings

import numpy as np
import pytest

from fibered import fields as fl
from fibered import model as md
from fibered import solver as sv
from fibered.errors import InputError, StepFailure


def test_linear_coercive_problem_goes_to_zero():
    g = fl.make_grid([(0, 1), (0, 1)], 17, 1)
    problem = md.Problem([md.constant_coefficient()] * 2, md.quadratic_potential(-np.eye(2)), g)
    y = g.points()[..., 1]
    init = md.SolutionTuple([fl.ScalarField(g, np.sin(np.pi * y) * g.interior_mask(1))] * 2)
    sol, log = sv.solve(problem, init)
    assert log.converged
    assert max(np.max(np.abs(f.values)) for f in sol) < 1e-12


def test_allen_cahn_kink_accuracy():
    g = fl.make_grid([(0, 1), (-20, 20)], [5, 801], 1, ("neumann", "dirichlet"))
    assert g.spacing[1] == pytest.approx(0.05)
    y = g.points()[..., 1]
    problem = md.Problem([md.constant_coefficient()], md.allen_cahn_potential(), g)
    init = md.SolutionTuple([fl.ScalarField(g, np.clip(y / 3, -1, 1))])
    sol, log = sv.solve(problem, init, sv.SolverConfig(residual_tol=1e-10))
    assert log.converged
    assert np.max(np.abs(sol[0].values - np.tanh(y / np.sqrt(2)))) <= 5e-3
    # Dirichlet data untouched
    np.testing.assert_array_equal(sol[0].values[:, [0, -1]], init[0].values[:, [0, -1]])


def test_blwz_2d_interior_residual(blwz_2d):
    problem, sol, _ = blwz_2d
    assert md.residual_sup(problem, sol) <= 1e-10


def test_gradient_flow_energy_decreases(allen_cahn):
    problem, newton = allen_cahn
    y = problem.grid.points()[..., 1]
    init = md.SolutionTuple([fl.ScalarField(problem.grid, np.clip(y / 3, -1, 1))])
    cfg = sv.SolverConfig(scheme="gradient-flow", step=0.5, residual_tol=1e-9, max_iterations=400)
    sol, log = sv.solve(problem, init, cfg)
    assert log.converged and log.energy_monotone()
    assert np.max(np.abs(sol[0].values - newton[0].values)) < 1e-6


def test_step_failure_carries_last_iterate():
    # -Lap u = 50 e^u on the unit square has no solution
    g = fl.make_grid([(0, 1), (0, 1)], 17, 1)
    lam = 50.0
    pot = md.Potential(1, lambda x, xi: lam * np.exp(xi[..., 0]), lambda x, xi: lam * np.exp(xi),
                       lambda x, xi: lam * np.exp(xi)[..., None])
    problem = md.Problem([md.constant_coefficient()], pot, g)
    init = md.SolutionTuple([fl.ScalarField(g, np.zeros(g.shape))])
    with np.errstate(all="ignore"), pytest.raises(StepFailure) as exc:
        sv.solve(problem, init, sv.SolverConfig(max_iterations=200))
    assert exc.value.last_iterate is not None
    assert exc.value.log.residual


def test_non_convergence_is_flagged():
    g = fl.make_grid([(0, 1), (-8, 8)], [5, 81], 1, ("neumann", "dirichlet"))
    problem = md.Problem([md.constant_coefficient()], md.allen_cahn_potential(), g)
    y = g.points()[..., 1]
    init = md.SolutionTuple([fl.ScalarField(g, np.clip(y / 3, -1, 1))])
    _, log = sv.solve(problem, init, sv.SolverConfig(max_iterations=1, residual_tol=1e-14))
    assert not log.converged


def test_checkpoint_resume(tmp_path):
    g = fl.make_grid([(0, 1), (-8, 8)], [5, 81], 1, ("neumann", "dirichlet"))
    problem = md.Problem([md.constant_coefficient()], md.allen_cahn_potential(), g)
    y = g.points()[..., 1]
    init = md.SolutionTuple([fl.ScalarField(g, np.clip(y / 3, -1, 1))])
    full, _ = sv.solve(problem, init, sv.SolverConfig(residual_tol=1e-11))
    cfg = sv.SolverConfig(residual_tol=1e-11, max_iterations=2, checkpoint_dir=str(tmp_path), checkpoint_every=1)
    sv.solve(problem, init, cfg)
    _, it = sv.load_checkpoint(tmp_path)
    assert it == 2
    cfg.max_iterations = 50
    resumed, log = sv.resume(problem, cfg)
    assert log.converged and log.iterations[0] == 2
    np.testing.assert_allclose(resumed[0].values, full[0].values, atol=1e-10)


@pytest.mark.parametrize("kwargs", [{"scheme": "sor"}, {"residual_tol": 0}, {"max_iterations": 0}, {"step": -1}])
def test_config_validation(kwargs):
    with pytest.raises(InputError):
        sv.SolverConfig(**kwargs)


def test_zero_boundary_blwz_profile_is_trivial():
    prof = sv.blwz_profile_1d(10.0, 0.05, (0.0, 0.0))
    assert prof.trivial


def test_blwz_profile_structure():
    prof = sv.blwz_profile_1d(30.0, 0.02, (1.0, 1.0))
    assert not prof.trivial and prof.monotone and prof.nonnegative
    assert prof.residual <= 1e-8
    assert prof.reflection_defect <= 1e-3
    t = prof.t - prof.center
    far = np.abs(t) > 0.8 * 30
    ratio = (prof.u + prof.v)[far] / (1 + np.abs(t[far]))
    assert ratio.max() < 1.1


def test_identity_profile_extension():
    g = fl.make_grid([(-1, 1), (-2, 2)], 9, 1)
    f = sv.extend_1d_to_nd(sv.linear_profile(), [1.0], g)
    np.testing.assert_allclose(f.values, g.points()[..., 1])


def test_oblique_kink_direction():
    g = fl.make_grid([(-1, 1), (-3, 3), (-3, 3)], 11, 1)
    w = np.array([0.6, 0.8])
    f = sv.extend_1d_to_nd(sv.tanh_profile(), w, g)
    gy = fl.y_grad(f, "analytic")
    nu = gy / np.linalg.norm(gy, axis=-1, keepdims=True)
    np.testing.assert_allclose(nu, np.broadcast_to(w, nu.shape), atol=1e-14)


def test_non_unit_omega():
    g = fl.make_grid([(-1, 1), (-3, 3), (-3, 3)], 7, 1)
    with pytest.warns(UserWarning, match="normalizing"):
        f = sv.extend_1d_to_nd(sv.linear_profile(), [3.0, 4.0], g)
    np.testing.assert_allclose(fl.y_grad(f, "analytic")[0, 0, 0], [0.6, 0.8])
    with pytest.raises(InputError):
        sv.extend_1d_to_nd(sv.linear_profile(), [3.0, 4.0], g, strict=True)


def test_extended_blwz_pair_residual_second_order():
    prof = sv.blwz_profile_1d(30.0, 0.02, (1.0, 1.0))
    pu, pv = prof.profiles()
    errs = []
    for n in (41, 81):
        g = fl.make_grid([(-1, 1), (-4, 4)], [5, n], 1, ("neumann", "dirichlet"))
        problem = md.Problem([md.constant_coefficient()] * 2, md.blwz_potential(), g)
        sol = md.SolutionTuple([sv.extend_1d_to_nd(pu, [1.0], g), sv.extend_1d_to_nd(pv, [1.0], g)])
        errs.append(md.residual_sup(problem, sol))
    assert np.log2(errs[0] / errs[1]) > 1.8


def test_tanh_profile_far_tail_is_finite():
    prof = sv.tanh_profile()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        d = prof.d1(np.array([-2000.0, 0.0, 2000.0]))
    assert d[0] == 0.0 and d[2] == 0.0 and d[1] == pytest.approx(1 / np.sqrt(2))

import numpy as np
import pytest

from fibered import fields as fl
from fibered import geometry as geo
from fibered import model as md
from fibered import solver as sv
from fibered.errors import MaskedValueError


def _grid(N=3, m=1, n=11, half=2.0):
    return fl.make_grid([(-half, half)] * N, [n] * N, m)


def test_mask_for_hyperplane_and_x_only():
    g = _grid()
    lin = fl.sample(fl.affine_field([0.0, 0.6, 0.8]), g)
    assert geo.active_region(lin).mask.all()
    xonly = fl.sample(fl.quadratic_field(np.diag([1.0, 0.0, 0.0])), g)
    assert not geo.active_region(xonly).mask.any()


def test_kink_mask_and_near_threshold():
    g = fl.make_grid([(-20, 20), (-20, 20)], 81, 1)
    f = sv.extend_1d_to_nd(sv.tanh_profile(), [1.0], g)
    # |u'| = sech^2(y/sqrt 2)/sqrt 2 drops below 1e-8 for |y| beyond about 13.6
    act = geo.active_region(f, eps_grad=1e-8)
    y = g.points()[..., 1]
    expect = np.cosh(y / np.sqrt(2)) ** -2 / np.sqrt(2) > 1e-8
    np.testing.assert_array_equal(act.mask, expect)
    assert 0.0 < act.near_threshold_fraction < 0.1
    assert act.to_dict()["masked_fraction"] == pytest.approx(1 - expect.mean())


@pytest.mark.parametrize("omega", [[1.0, 0.0], [0.6, 0.8]])
def test_one_dimensional_fields_have_no_geometry(omega):
    g = _grid()
    f = sv.extend_1d_to_nd(sv.tanh_profile(), omega, g)
    b = geo.compute_STU(f, "analytic")
    mk = b.active.mask
    for name in ("S", "T", "U", "K"):
        assert np.max(np.abs(getattr(b, name)[mk])) < 1e-12, name


def test_value_at_inactive_node():
    g = _grid()
    b = geo.compute_STU(fl.sample(fl.quadratic_field(np.diag([0.0, 1.0, 1.0])), g), "analytic")
    with pytest.raises(MaskedValueError):
        b.value_at("S", (5, 5, 5))
    assert np.isfinite(b.value_at("S", (5, 7, 5)))


def test_random_fields_nonnegative(rng):
    for N, m in ((2, 1), (3, 1), (3, 2), (4, 2)):
        g = fl.make_grid([(-1, 1)] * N, [7] * N, m)
        for _ in range(10):
            b = geo.compute_STU(fl.sample(fl.random_smooth_field(rng, N), g), "analytic")
            neg = b.negativity()
            assert neg["S"] >= -1e-10 and neg["T"] >= -1e-10 and neg["U-S"] >= -1e-10


def test_tangential_gradient_of_u_itself():
    g = _grid()
    u = fl.sample(fl.random_smooth_field(np.random.default_rng(3), 3), g)
    tg = geo.tangential_gradient(u, u, mode="analytic")
    mk = geo.active_region(u).mask
    assert np.max(np.abs(tg[mk])) < 1e-12


def test_tangential_gradient_of_x_function():
    g = _grid()
    u = fl.sample(fl.quadratic_field(np.diag([0.0, 1.0, 1.0])), g)
    G = fl.sample(fl.quadratic_field(np.diag([1.0, 0.0, 0.0])), g)
    tg = geo.tangential_gradient(G, u, mode="analytic")
    assert np.nanmax(np.abs(tg)) == 0.0


def test_tangential_gradient_angular_on_circles():
    g = _grid()
    u = fl.sample(fl.quadratic_field(np.diag([0.0, 1.0, 1.0])), g)

    def grad(X):
        y1, y2 = X[..., 1], X[..., 2]
        r2 = y1 ** 2 + y2 ** 2
        out = np.zeros(X.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[..., 1], out[..., 2] = -y2 / r2, y1 / r2
        return out
    with np.errstate(divide="ignore", invalid="ignore"):
        G = fl.sample(fl.AnalyticField(lambda X: np.arctan2(X[..., 2], X[..., 1]), grad, None), g)
    sel = geo.active_region(u).mask & (np.linalg.norm(g.points()[..., 1:], axis=-1) > 0.5)
    tg = geo.tangential_gradient(G, u, nodes=sel, mode="analytic")
    np.testing.assert_allclose(tg[sel], grad(g.points())[sel][:, 1:], atol=1e-14)
    nu = fl.y_grad(u, "analytic")[sel]
    assert np.max(np.abs(np.sum(tg[sel] * nu, axis=-1))) < 1e-12
    with pytest.raises(MaskedValueError):
        geo.tangential_gradient(G, u, nodes=[[5, 5, 5]], mode="analytic")


def test_hyperplane_curvature_zero():
    g = _grid(N=4)
    K = geo.curvature_length(fl.sample(fl.affine_field([0.0, 1.0, 2.0, 2.0]), g))
    assert np.max(np.abs(K)) < 1e-14


def test_sphere_and_cylinder_curvature():
    g = fl.make_grid([(-1, 1), (-2, 2), (-2, 2), (-2, 2)], [5, 17, 17, 17], 1)
    r_all = np.linalg.norm(g.points()[..., 1:], axis=-1)
    sphere = fl.sample(fl.quadratic_field(np.diag([0.0, 1.0, 1.0, 1.0])), g)
    K = geo.curvature_length(sphere)
    mk = np.isfinite(K)
    np.testing.assert_allclose(K[mk], np.sqrt(2) / r_all[mk], rtol=1e-12)
    k = geo.principal_curvatures(sphere)[mk]
    # -P H P / |grad_y u| with the outward normal: both curvatures are -1/r
    np.testing.assert_allclose(k, np.stack([-1 / r_all[mk]] * 2, axis=-1), rtol=1e-12)

    cyl = fl.sample(fl.quadratic_field(np.diag([0.0, 1.0, 1.0, 0.0])), g)
    rc = np.linalg.norm(g.points()[..., 1:3], axis=-1)
    K = geo.curvature_length(cyl)
    mk = np.isfinite(K)
    np.testing.assert_allclose(K[mk], 1 / rc[mk], rtol=1e-12)
    k = geo.principal_curvatures(cyl)[mk]
    assert np.max(np.abs(np.min(np.abs(k), axis=-1))) < 1e-12


def test_radial_identity_two():
    g = fl.make_grid([(-1, 1), (-2, 2), (-2, 2)], 13, 1)
    u = fl.sample(fl.quadratic_field(np.diag([2.0, 2.0, 2.0])), g)
    assert geo.identity_check(u, md.constant_coefficient(), "analytic").sup_ii <= 1e-10


def test_one_dimensional_identity_sides_vanish():
    g = _grid()
    f = sv.extend_1d_to_nd(sv.tanh_profile(), [0.6, 0.8], g)
    t = geo.identity_terms(f, md.p_power_coefficient(3.0), "analytic")
    for key in ("lhs_i", "rhs_i", "lhs_ii", "rhs_ii"):
        assert np.max(np.abs(t[key])) < 1e-12


@pytest.mark.parametrize("N, m", [(2, 1), (3, 1), (3, 2)])
def test_identities_random_p3(N, m, rng):
    g = fl.make_grid([(-1, 1)] * N, [9] * N, m)
    f = fl.sample(fl.random_smooth_field(rng, N), g)
    assert geo.identity_check(f, md.p_power_coefficient(3.0), "analytic").passed
    rep = geo.identity_check(fl.ScalarField(g, f.values), md.p_power_coefficient(3.0), "fd")
    assert rep.mode == "fd" and rep.active_nodes > 0


def test_fd_refinement_reports_boundary_layer():
    af = fl.random_smooth_field(np.random.default_rng(5), 2)
    g = fl.make_grid([(-1, 1)] * 2, 17, 1)
    study = geo.fd_refinement_study(af, g, md.p_power_coefficient(3.0))
    assert study["boundary_layer"] == 2
    for key in ("i", "ii"):
        assert study[key]["exact"] or study[key]["order"] >= 1.8


def test_bundle_csv(tmp_path):
    g = _grid(N=2)
    b = geo.compute_STU(fl.sample(fl.random_smooth_field(np.random.default_rng(1), 2), g))
    b.to_csv(tmp_path / "b.csv")
    data = np.loadtxt(tmp_path / "b.csv", delimiter=",", skiprows=1)
    assert data.shape == (g.size, 7)

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swlab.cells import brute_force_energy, configuration_of, quadratic_coeffs
from swlab.energy import (
    SYM2D_TARGET,
    EnergyEstimate,
    closed_form_E_sym2d,
    closed_form_W2_sym2d,
    energy_mc,
    energy_p,
    grad_energy_mc,
    grad_energy_mc_with_error,
    grad_energy_p,
    grad_w_theta,
    lipschitz_bound,
    sym2d_support,
)
from swlab.geometry import norm_inf2, sample_sphere, slice_matching, w_theta


def min_projected_gap(Y, dirs):
    return float(np.min(slice_matching(Y, Y, dirs)["min_gap"]))


def test_energy_p_permuted_target_is_zero():
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((5, 3))
    assert energy_p(Z[rng.permutation(5)], Z, sample_sphere(3, 20, 1)) == 0.0


def test_energy_p_single_point():
    rng = np.random.default_rng(1)
    y, z = rng.standard_normal((1, 3)), rng.standard_normal((1, 3))
    dirs = sample_sphere(3, 7, 2)
    expected = np.mean((dirs.axes @ (y - z).ravel()) ** 2)
    assert abs(energy_p(y, z, dirs) - expected) < 1e-14


def test_energy_p_equals_slice_average():
    rng = np.random.default_rng(2)
    Y, Z = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
    dirs = sample_sphere(2, 9, 3)
    ref = np.mean([w_theta(Y, Z, th) for th in dirs.axes])
    assert abs(energy_p(Y, Z, dirs) - ref) < 1e-14


def test_energy_p_matches_brute_force_small():
    rng = np.random.default_rng(3)
    Y, Z = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    dirs = sample_sphere(2, 2, 4)
    assert abs(energy_p(Y, Z, dirs) - brute_force_energy(Y, Z, dirs)) < 1e-12


def test_energy_mc_identical_supports():
    Z = np.random.default_rng(4).standard_normal((3, 2))
    est = energy_mc(Z, Z, 100, 0)
    assert est.value == 0.0 and est.std_error == 0.0 and est.p_used == 100


def test_energy_mc_std_error_definition():
    rng = np.random.default_rng(5)
    Y, Z = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    est = energy_mc(Y, Z, 500, 9)
    vals = np.array([w_theta(Y, Z, th) for th in sample_sphere(3, 500, 9).axes])
    assert abs(est.value - vals.mean()) < 1e-14
    assert abs(est.std_error - vals.std(ddof=1) / np.sqrt(500)) < 1e-14
    assert EnergyEstimate.from_json(est.to_json()) == est
    assert set(json.loads(est.to_json())) == {"value", "std_error", "p", "seed"}


@pytest.mark.parametrize("u,v", [(0.0, 0.0), (2 / np.pi, 0.0)])
def test_energy_mc_symmetric_case(u, v):
    est = energy_mc(sym2d_support(u, v), SYM2D_TARGET, 200_000, 11)
    assert abs(est.value - closed_form_E_sym2d(u, v)) <= 3 * est.std_error


def test_closed_form_values():
    assert closed_form_E_sym2d(0, 1) == 0.0
    assert closed_form_E_sym2d(0, 0) == 0.5
    assert abs(closed_form_E_sym2d(2 / np.pi, 0) - (0.5 - 2 / np.pi**2)) < 1e-15
    assert abs(closed_form_E_sym2d(2 / np.pi, 0) - 0.297357) < 1e-6
    assert closed_form_W2_sym2d(0, 1) == 0.0
    assert closed_form_W2_sym2d(1, 2) == 2.0
    assert closed_form_W2_sym2d(0, -1) == 0.0


def test_closed_form_continuous_at_axes():
    assert abs(closed_form_E_sym2d(1e-12, 0.7) - closed_form_E_sym2d(0.0, 0.7)) < 1e-9
    assert abs(closed_form_E_sym2d(1e-9, 1e-9) - 0.5) < 1e-8


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_closed_form_symmetries(u, v):
    e = closed_form_E_sym2d(u, v)
    assert e >= 0
    for su in (1, -1):
        for sv in (1, -1):
            assert closed_form_E_sym2d(su * u, sv * v) == e


def test_grad_w_theta_examples():
    Z = np.random.default_rng(6).standard_normal((4, 2))
    assert np.array_equal(grad_w_theta(Z, Z, [1.0, 0.0]), np.zeros((4, 2)))
    g = grad_w_theta([[3.0, 5.0]], [[0.0, 0.0]], [1.0, 0.0])
    assert np.array_equal(g, [[6.0, 0.0]])


def test_grad_w_theta_finite_differences():
    rng = np.random.default_rng(7)
    h = 1e-6
    checked = 0
    while checked < 20:
        Y, Z = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        theta = sample_sphere(3, 1, int(rng.integers(1 << 30))).axes[0]
        if min_projected_gap(Y, theta[None]) < 1e-3:
            continue
        g = grad_w_theta(Y, Z, theta)
        fd = np.zeros_like(Y)
        for k in range(5):
            for j in range(3):
                E = np.zeros_like(Y)
                E[k, j] = h
                fd[k, j] = (w_theta(Y + E, Z, theta) - w_theta(Y - E, Z, theta)) / (2 * h)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(g), 1e-8)
        checked += 1


def test_grad_energy_p_matches_quadratic_gradient():
    rng = np.random.default_rng(8)
    for _ in range(20):
        Y, Z = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        dirs = sample_sphere(3, 10, int(rng.integers(1 << 30)))
        q = quadratic_coeffs(configuration_of(Y, Z, dirs), Z, dirs)
        assert np.max(np.abs(grad_energy_p(Y, Z, dirs) - q.gradient(Y))) < 1e-10


def test_grad_energy_identical_supports_zero():
    Z = np.random.default_rng(9).standard_normal((4, 2))
    assert np.array_equal(grad_energy_p(Z, Z, sample_sphere(2, 5, 0)), np.zeros((4, 2)))
    assert np.array_equal(grad_energy_mc(Z, Z, 50, 1), np.zeros((4, 2)))


def test_grad_energy_mc_vanishes_at_saddle():
    Y = sym2d_support(2 / np.pi, 0.0)
    g, se = grad_energy_mc_with_error(Y, SYM2D_TARGET, 100_000, 3)
    assert np.array_equal(g, grad_energy_mc(Y, SYM2D_TARGET, 100_000, 3))
    assert np.linalg.norm(g) <= 3 * np.linalg.norm(se)


def test_grad_energy_mc_error_shrinks_with_p():
    Y = sym2d_support(0.4, 0.3)
    _, se_small = grad_energy_mc_with_error(Y, SYM2D_TARGET, 1000, 0)
    _, se_big = grad_energy_mc_with_error(Y, SYM2D_TARGET, 100_000, 0)
    assert np.linalg.norm(se_big) < np.linalg.norm(se_small) / 5


def test_lipschitz_bound_examples():
    assert lipschitz_bound(np.zeros((2, 3)), np.zeros((2, 3)), 1.0) == 4.0
    X = np.array([[1.0, 0.0], [0.0, 0.5]])
    Z0 = np.zeros((2, 2))
    assert lipschitz_bound(2 * X, Z0, 0.0) == 2 * lipschitz_bound(X, Z0, 0.0)
    with pytest.raises(ValueError):
        lipschitz_bound(X, Z0, -1.0)


def test_lipschitz_inequality_random():
    rng = np.random.default_rng(10)
    worst = np.inf
    for _ in range(2000):
        n, d = rng.integers(1, 6), rng.integers(1, 4)
        X, Z = rng.standard_normal((n, d)), rng.standard_normal((n, d))
        r = rng.uniform(0.01, 2)
        D1 = rng.standard_normal((n, d))
        D2 = rng.standard_normal((n, d))
        Y1 = X + r * rng.uniform() * D1 / np.linalg.norm(D1, axis=1, keepdims=True)
        Y2 = X + r * rng.uniform() * D2 / np.linalg.norm(D2, axis=1, keepdims=True)
        theta = sample_sphere(d, 1, int(rng.integers(1 << 30))).axes[0]
        slack = lipschitz_bound(X, Z, r) * norm_inf2(Y1 - Y2) - abs(w_theta(Y1, Z, theta) - w_theta(Y2, Z, theta))
        worst = min(worst, slack)
    assert worst >= -1e-9


def test_semiconcavity_random():
    rng = np.random.default_rng(11)
    for _ in range(500):
        n, d = rng.integers(1, 6), rng.integers(1, 4)
        Y1, Y2, Z = (rng.standard_normal((n, d)) for _ in range(3))
        dirs = sample_sphere(d, int(rng.integers(1, 8)), int(rng.integers(1 << 30)))
        lam = rng.uniform()

        def g(Y):
            return energy_p(Y, Z, dirs) - np.sum(Y**2) / n

        assert g(lam * Y1 + (1 - lam) * Y2) >= lam * g(Y1) + (1 - lam) * g(Y2) - 1e-9

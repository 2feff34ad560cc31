import math

import numpy as np
import pytest

from model import make_model
from next_generation import (SpectralConvergenceError, apply_kernel, dense_spectral_radius, next_gen_matrix, r0,
                             r_e, spectral_radius)

SBM_R0 = (3 + math.sqrt(2)) / 2


def test_apply_kernel_zero(sbm_model):
    np.testing.assert_array_equal(apply_kernel(sbm_model, np.zeros(2)), np.zeros(2))


def test_apply_kernel_scalar_ngo():
    model = make_model([1.0], [2.0], [[3.0]])
    np.testing.assert_allclose(apply_kernel(model, [1.0], [1.0], kernel="ngo"), [1.5])


def test_apply_kernel_sbm(sbm_model):
    np.testing.assert_allclose(apply_kernel(sbm_model, np.ones(2), np.ones(2)), [2.5, 1.5])


def test_apply_kernel_rejects_unknown_kernel(sbm_model):
    with pytest.raises(ValueError, match="kernel must be one of"):
        apply_kernel(sbm_model, np.ones(2), kernel="gamma")


def test_apply_kernel_dimension_mismatch(sbm_model):
    with pytest.raises(ValueError, match="length 3"):
        apply_kernel(sbm_model, np.ones(3))


def test_next_gen_matrix_sbm(sbm_model):
    np.testing.assert_array_equal(next_gen_matrix(sbm_model, [1.0, 1.0]), [[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_array_equal(next_gen_matrix(sbm_model, [1.0, 0.0]), [[2.0, 0.0], [0.5, 0.0]])
    np.testing.assert_array_equal(next_gen_matrix(sbm_model, [0.0, 0.0]), np.zeros((2, 2)))


def test_spectral_radius_examples():
    assert spectral_radius(np.zeros((3, 3))).rho == 0.0
    assert spectral_radius([[3.0]]).rho == pytest.approx(3.0, abs=1e-12)
    assert spectral_radius([[2.0, 0.5], [0.5, 1.0]]).rho == pytest.approx(SBM_R0, abs=1e-10)


def test_spectral_radius_certificate():
    m = np.array([[2.0, 0.5], [0.5, 1.0]])
    result = spectral_radius(m)
    for v, a in ((result.right, m), (result.left, m.T)):
        assert np.all(v >= 0)
        assert v.sum() == pytest.approx(1.0)
        assert np.abs(a @ v - result.rho * v).max() <= 1e-10 * max(1.0, result.rho)


def test_spectral_radius_periodic():
    assert spectral_radius([[0.0, 1.0], [1.0, 0.0]]).rho == pytest.approx(1.0, abs=1e-10)
    cycle = np.roll(np.eye(3), 1, axis=1) * 2
    assert spectral_radius(cycle).rho == pytest.approx(2.0, abs=1e-9)


def test_spectral_radius_reducible():
    m = np.array([[2.0, 0.0], [0.5, 0.0]])
    assert spectral_radius(m).rho == pytest.approx(2.0, abs=1e-10)


def test_spectral_radius_rejects_bad_input():
    with pytest.raises(ValueError, match="square"):
        spectral_radius(np.ones((2, 3)))
    with pytest.raises(ValueError, match="nonnegative"):
        spectral_radius([[1.0, -1.0], [0.0, 1.0]])


def test_spectral_radius_iteration_cap_uses_dense_solver():
    m = np.array([[1.0, 1.0], [0.0, 1.0]])
    result = spectral_radius(m, max_iter=5)
    assert result.method == "dense"
    assert result.rho == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(result.right, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(result.left, [0.0, 1.0], atol=1e-12)
    assert spectral_radius([[2.0, 0.5], [0.5, 1.0]]).method == "power"


def test_defective_next_generation_matrix():
    # one-way transmission: M = [[1, 0.5], [0, 1]] is a Jordan block
    model = make_model([0.5, 0.5], [1.0, 1.0], [[2.0, 1.0], [0.0, 2.0]])
    assert r0(model) == pytest.approx(1.0, abs=1e-10)
    assert r0(model) == pytest.approx(dense_spectral_radius(next_gen_matrix(model)), abs=1e-10)
    m = next_gen_matrix(model)
    result = spectral_radius(m)
    assert result.method == "dense"
    for v, a in ((result.right, m), (result.left, m.T)):
        assert np.all(v >= 0)
        assert v.sum() == pytest.approx(1.0)
        assert np.abs(a @ v - result.rho * v).max() <= 1e-6


def test_dense_solver_failure_is_reported(monkeypatch):
    import next_generation

    def no_perron(m):
        raise SpectralConvergenceError("dense Perron vectors fail the residual check")

    monkeypatch.setattr(next_generation, "_dense_perron", no_perron)
    with pytest.raises(SpectralConvergenceError):
        spectral_radius(np.array([[1.0, 1.0], [0.0, 1.0]]), max_iter=5)


def test_power_iteration_matches_dense_oracle(rng):
    for _ in range(50):
        n = int(rng.integers(2, 7))
        m = rng.uniform(0.0, 2.0, (n, n))
        m[:, rng.random(n) < 0.2] = 0
        if not m.any():
            continue
        assert spectral_radius(m).rho == pytest.approx(dense_spectral_radius(m), abs=1e-8)


def test_r0_scalar(scalar_model):
    assert r0(scalar_model(k=3.0)) == pytest.approx(3.0, abs=1e-12)


def test_r_e_sbm(sbm_model):
    assert r0(sbm_model) == pytest.approx(SBM_R0, abs=1e-10)
    assert r_e(sbm_model, [1.0, 1.0]) == r0(sbm_model)
    assert r_e(sbm_model, [0.0, 0.0]) == 0.0


def test_r_e_rank_one():
    weights = np.array([0.2, 0.3, 0.5])
    model = make_model(weights, [2.0, 2.0, 2.0], np.full((3, 3), 1.5))
    eta = np.array([0.1, 0.7, 0.4])
    assert r_e(model, eta) == pytest.approx(1.5 / 2.0 * np.sum(eta * weights), abs=1e-10)


def test_r_e_monotone(rng, random_model):
    for _ in range(20):
        model = random_model(rng, 4)
        eta2 = rng.uniform(size=4)
        eta1 = eta2 * rng.uniform(size=4)
        assert r_e(model, eta1) <= r_e(model, eta2) + 1e-10


def test_r_e_scale_equivariant(rng, random_model):
    model = random_model(rng, 3)
    scaled = make_model(model.weights, model.gamma, 2.5 * model.kernel, model.cost_density)
    eta = rng.uniform(size=3)
    assert r_e(scaled, eta) == pytest.approx(2.5 * r_e(model, eta), abs=1e-10)

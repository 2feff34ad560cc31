"""
Coupled models with conjugate parameters have the same outcomes on pre-conjugate strategies.
"""
import numpy as np
import pytest

from coupling import check_model_conjugacy, conjugate, is_conjugate, is_preconjugate
from dynamics import maximal_equilibrium
from model import cost
from next_generation import r_e
from pareto import compare_frontiers, evaluate_many, frontier, grid_strategies
from reduction import coarsest_reduction, reduce, reduce_strategy


def _draw(rng, coupled_models, preconjugate_strategy):
    n1, n2 = (int(x) for x in rng.integers(1, 6, size=2))
    model1, model2, c = coupled_models(rng, n1, n2)
    eta1 = rng.uniform(size=n1)
    eta2 = preconjugate_strategy(rng, c, eta1)
    return model1, model2, c, eta1, eta2


def test_coupled_models_pass_conjugacy_check(rng, coupled_models):
    for _ in range(20):
        model1, model2, c = coupled_models(rng, 4, 3)
        assert check_model_conjugacy(c, model1, model2).passed


def test_preconjugate_strategies_share_outcomes(rng, coupled_models, preconjugate_strategy):
    checked = 0
    for _ in range(100):
        model1, model2, c, eta1, eta2 = _draw(rng, coupled_models, preconjugate_strategy)
        assert is_preconjugate(c, eta1, eta2, 1e-12)

        re1 = r_e(model1, eta1)
        assert r_e(model2, eta2) == pytest.approx(re1, abs=1e-8)
        assert cost(model2, eta2) == pytest.approx(cost(model1, eta1), abs=1e-12)
        if abs(re1 - 1) < 0.05:
            continue

        eq1 = maximal_equilibrium(model1, eta1)
        eq2 = maximal_equilibrium(model2, eta2)
        assert is_conjugate(c, eq1.g, eq2.g, tol=1e-6)
        i1 = np.sum(eq1.g * eta1 * model1.weights)
        i2 = np.sum(eq2.g * eta2 * model2.weights)
        assert i2 == pytest.approx(i1, abs=1e-6)
        checked += 1
    assert checked > 50


def test_conjugate_strategy_is_preconjugate(rng, coupled_models):
    model1, model2, c = coupled_models(rng, 5, 4)
    eta1 = rng.uniform(size=5)
    eta2 = conjugate(c, eta1, "left")
    assert is_preconjugate(c, eta1, eta2)
    assert r_e(model2, eta2) == pytest.approx(r_e(model1, eta1), abs=1e-8)


def test_outcomes_differ_without_preconjugacy(sbm_blowup):
    big, _ = sbm_blowup(2)
    reduced, c = reduce(big, coarsest_reduction(big))
    eta = np.array([1.0, 0.0, 1.0, 1.0])
    assert r_e(reduced, [0.5, 1.0]) == pytest.approx(r_e(big, eta), abs=1e-10)
    assert not is_preconjugate(c, eta, [1.0, 1.0])
    assert r_e(reduced, [1.0, 1.0]) > r_e(big, eta) + 0.1


def test_reduction_shares_outcomes_on_random_strategies(rng, sbm_blowup):
    big, _ = sbm_blowup([2, 3])
    p = coarsest_reduction(big)
    reduced, _ = reduce(big, p)
    for _ in range(20):
        eta = rng.uniform(size=big.n)
        eta_red = reduce_strategy(big, p, eta)
        assert r_e(reduced, eta_red) == pytest.approx(r_e(big, eta), abs=1e-8)
        assert cost(reduced, eta_red) == pytest.approx(cost(big, eta), abs=1e-12)


def test_coupled_frontiers_on_component_grid(rng, coupled_models):
    """Both models evaluated on the strategies that are constant on the components of the coupling."""
    model1, model2, c = coupled_models(rng, 4, 3, n_components=2)
    left_labels = c.side_arrays("left")[1]
    right_labels = c.side_arrays("right")[1]
    grid = grid_strategies(len(c.components), 10)
    for loss_kind in ("Re", "I"):
        f1 = frontier(evaluate_many(model1, [z[left_labels] for z in grid], loss_kind))
        f2 = frontier(evaluate_many(model2, [z[right_labels] for z in grid], loss_kind))
        assert compare_frontiers(f1, f2).hausdorff_distance <= 1e-6

import json
import warnings

import numpy as np
import pytest

from model import (Model, ModelError, StrategyError, cost, load_model, make_model, make_strategy, model_from_dict,
                   model_to_dict, normalize, save_model, sbm, uniform_cost, validate)
from next_generation import r_e


def test_validate_scalar_model_ok():
    model = Model(weights=[1.0], gamma=[1.0], kernel=[[3.0]], cost_density=[1.0])
    assert validate(model) == []


def test_validate_reports_weight_sum():
    model = Model(weights=[0.5, 0.6], gamma=[1.0, 1.0], kernel=np.ones((2, 2)), cost_density=[1.0, 1.0])
    violations = validate(model)
    assert len(violations) == 1
    assert violations[0].startswith("weights sum to 1.1")


def test_validate_reports_every_index():
    model = Model(weights=[0.5, 0.5], gamma=[0.0, -1.0], kernel=[[1.0, -2.0], [0.0, 1.0]],
                  cost_density=[1.0, -1.0])
    violations = validate(model)
    assert "gamma[0] not strictly positive" in violations
    assert "gamma[1] not strictly positive" in violations
    assert "kernel[0][1] is negative" in violations
    assert "cost[1] is negative" in violations


def test_validate_dimension_mismatch():
    model = Model(weights=[0.5, 0.5], gamma=[1.0], kernel=np.ones((2, 2)), cost_density=[1.0, 1.0])
    assert validate(model) == ["gamma has length 1, expected 2"]


def test_zero_mass_atom_rejected():
    with pytest.raises(ModelError, match=r"weights\[1\] not strictly positive"):
        make_model([1.0, 0.0], [1.0, 1.0], np.ones((2, 2)))


def test_weights_renormalized_with_warning():
    with pytest.warns(RuntimeWarning, match="renormalizing"):
        model = make_model([0.5, 0.5 + 1e-10], [1.0, 1.0], np.ones((2, 2)))
    assert abs(model.weights.sum() - 1) <= 1e-15


def test_weights_far_from_one_rejected():
    with pytest.raises(ModelError, match="weights sum to"):
        make_model([0.5, 0.5 + 1e-6], [1.0, 1.0], np.ones((2, 2)))


def test_exact_weights_no_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        make_model([0.25, 0.75], [1.0, 1.0], np.ones((2, 2)))


def test_model_is_immutable(sbm_model):
    with pytest.raises(ValueError):
        sbm_model.kernel[0, 0] = 1.0
    with pytest.raises(AttributeError):
        sbm_model.gamma = np.ones(2)


def test_sbm_scalar_p():
    model = sbm(0.3, [[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_allclose(model.weights, [0.3, 0.7])
    np.testing.assert_array_equal(model.gamma, [1.0, 1.0])
    np.testing.assert_array_equal(model.cost_density, [1.0, 1.0])


def test_strategy_bounds():
    with pytest.raises(StrategyError, match=r"eta\[1\]"):
        make_strategy([0.5, 1.5])
    with pytest.raises(StrategyError, match="length"):
        make_strategy([0.5], n=2)
    with pytest.raises(StrategyError):
        make_strategy([np.nan])


def test_cost_examples(sbm_model):
    assert cost(sbm_model, [1.0, 1.0]) == 0.0
    assert cost(sbm_model, [0.0, 0.0]) == pytest.approx(1.0, abs=1e-15)
    model = make_model([0.5, 0.5], [1.0, 1.0], np.ones((2, 2)), [2.0, 4.0])
    assert cost(model, [0.5, 1.0]) == pytest.approx(0.5, abs=1e-15)


def test_cost_dimension_mismatch(sbm_model):
    with pytest.raises(StrategyError):
        cost(sbm_model, [1.0])


def test_cost_is_affine(rng, random_model):
    for _ in range(20):
        model = random_model(rng, 4)
        eta1, eta2 = rng.uniform(size=(2, 4))
        alpha = rng.uniform()
        mixed = cost(model, alpha * eta1 + (1 - alpha) * eta2)
        assert mixed == pytest.approx(alpha * cost(model, eta1) + (1 - alpha) * cost(model, eta2), abs=1e-12)


def test_uniform_cost(rng, random_model):
    model = uniform_cost(random_model(rng, 3))
    np.testing.assert_array_equal(model.cost_density, np.ones(3))
    assert cost(model, np.zeros(3)) == pytest.approx(1.0, abs=1e-12)


def test_normalize_fixed_point(sbm_model):
    normalized = normalize(sbm_model)
    np.testing.assert_array_equal(normalized.weights, sbm_model.weights)
    np.testing.assert_array_equal(normalized.kernel, sbm_model.kernel)


def test_normalize_scalar():
    model = make_model([1.0], [2.0], [[6.0]], [1.0])
    normalized = normalize(model)
    assert normalized.kernel[0, 0] == pytest.approx(3.0)
    assert normalized.gamma[0] == 1.0
    assert r_e(normalized, [1.0]) == pytest.approx(r_e(model, [1.0]), abs=1e-10)


def test_normalize_preserves_outcomes(rng, random_model):
    for _ in range(5):
        model = random_model(rng, 2)
        density = model.cost_density / np.sum(model.cost_density * model.weights)
        model = model.replace(cost_density=density)
        normalized = normalize(model)
        for eta in rng.uniform(size=(20, 2)):
            assert r_e(normalized, eta) == pytest.approx(r_e(model, eta), abs=1e-10)
            assert cost(normalized, eta) == pytest.approx(cost(model, eta), abs=1e-12)
        np.testing.assert_array_equal(normalized.gamma, np.ones(2))
        np.testing.assert_array_equal(normalized.cost_density, np.ones(2))


def test_normalize_rejects_bad_cost():
    with pytest.raises(ModelError, match="not strictly positive"):
        normalize(make_model([0.5, 0.5], [1.0, 1.0], np.ones((2, 2)), [0.0, 2.0]))
    with pytest.raises(ModelError, match="integrates to"):
        normalize(make_model([0.5, 0.5], [1.0, 1.0], np.ones((2, 2)), [2.0, 2.0]))


def test_model_dict_rejects_unknown_keys(sbm_model):
    data = model_to_dict(sbm_model)
    data["colour"] = "red"
    with pytest.raises(ModelError, match="unknown key 'colour'"):
        model_from_dict(data)
    del data["colour"]
    del data["gamma"]
    with pytest.raises(ModelError, match="missing key 'gamma'"):
        model_from_dict(data)


def test_model_file_roundtrip(tmp_path, sbm_model):
    path = str(tmp_path / "model.json")
    save_model(sbm_model, path)
    loaded = load_model(path)
    np.testing.assert_array_equal(loaded.kernel, sbm_model.kernel)
    np.testing.assert_array_equal(loaded.weights, sbm_model.weights)


def test_load_example_model(data_dir):
    model = load_model("%s/sbm.json" % data_dir)
    assert model.n == 2
    assert model.labels == ("a", "b")


def test_malformed_kernel(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"weights": [1.0], "gamma": [1.0], "cost": [1.0], "kernel": [3.0]}))
    with pytest.raises(ModelError):
        load_model(str(path))

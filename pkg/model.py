"""
Heterogeneous SIS model parameters on a finite feature space.

A model is given by the feature weights (the measure mu), the recovery rates gamma,
the transmission kernel k (row = infectee feature, column = infector feature) and the
vaccination cost density. Strategies are vectors eta in [0, 1]^n giving, per feature,
the proportion of NON-vaccinated individuals.
"""
import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

WEIGHT_TOL = 1e-12  # |sum(weights) - 1| allowed without touching the weights
WEIGHT_RENORMALIZE_TOL = 1e-9  # renormalized with a warning up to this deviation
COST_NORMALIZATION_TOL = 1e-9

MODEL_KEYS = {"labels", "weights", "gamma", "kernel", "cost"}
REQUIRED_KEYS = MODEL_KEYS - {"labels"}


class ModelError(ValueError):
    """Raised when model parameters violate the model invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class StrategyError(ValueError):
    """Raised when a vaccination strategy is not an element of [0, 1]^n."""


def _frozen(values, ndim):
    x = np.array(values, dtype=np.float64)
    if x.ndim != ndim:
        raise ModelError(["expected a %d-dimensional array, got shape %s" % (ndim, x.shape)])
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class Model:
    """
    SIS model parameters. Instances are immutable, arrays are read-only.
    Use make_model() to build a validated model; the raw constructor only coerces arrays,
    so that validate() can report on arbitrary parameter sets.
    """
    weights: np.ndarray
    gamma: np.ndarray
    kernel: np.ndarray
    cost_density: np.ndarray
    labels: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights, 1))
        object.__setattr__(self, "gamma", _frozen(self.gamma, 1))
        object.__setattr__(self, "kernel", _frozen(self.kernel, 2))
        object.__setattr__(self, "cost_density", _frozen(self.cost_density, 1))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))

    @property
    def n(self):
        return len(self.weights)

    @property
    def ngo_kernel(self):
        """The next-generation kernel k(i, j) / gamma(j)."""
        return self.kernel / self.gamma[np.newaxis, :]

    def replace(self, **changes):
        fields = dict(weights=self.weights, gamma=self.gamma, kernel=self.kernel,
                      cost_density=self.cost_density, labels=self.labels)
        fields.update(changes)
        return Model(**fields)


def validate(model):
    """
    Check every model invariant.
    :param model: Model to check.
    :return violations: List of human-readable violations, one per offending index. Empty if the model is valid.
    """
    violations = list()
    n = model.n
    if n < 1:
        return ["model has no features"]
    for name, x in (("gamma", model.gamma), ("cost", model.cost_density)):
        if x.shape != (n,):
            violations.append("%s has length %d, expected %d" % (name, len(x), n))
    if model.kernel.shape != (n, n):
        violations.append("kernel has shape %s, expected (%d, %d)" % (model.kernel.shape, n, n))
    if model.labels is not None and len(model.labels) != n:
        violations.append("labels has length %d, expected %d" % (len(model.labels), n))
    if violations:
        return violations

    arrays = (("weights", model.weights), ("gamma", model.gamma), ("kernel", model.kernel),
              ("cost", model.cost_density))
    for name, x in arrays:
        if not np.all(np.isfinite(x)):
            violations.append("%s has non-finite entries" % name)
    if violations:
        return violations

    total = model.weights.sum()
    if abs(total - 1) > WEIGHT_TOL:
        violations.append("weights sum to %.17g != 1" % total)
    for i in np.flatnonzero(model.weights <= 0):
        violations.append("weights[%d] not strictly positive" % i)
    for i in np.flatnonzero(model.gamma <= 0):
        violations.append("gamma[%d] not strictly positive" % i)
    for i, j in zip(*np.nonzero(model.kernel < 0)):
        violations.append("kernel[%d][%d] is negative" % (i, j))
    for i in np.flatnonzero(model.cost_density < 0):
        violations.append("cost[%d] is negative" % i)
    return violations


def make_model(weights, gamma, kernel, cost=None, labels=None):
    """
    Build and validate a model.
    Weights within WEIGHT_RENORMALIZE_TOL of summing to 1 are renormalized with a warning.
    :param weights: Feature masses (length n).
    :param gamma: Recovery rates (length n).
    :param kernel: Transmission kernel (n x n), kernel[i][j] is the rate at which feature j infects feature i.
    :param cost: Vaccination cost density (length n). Defaults to the uniform cost.
    :param labels: Optional feature names.
    :return model: Validated Model.
    """
    weights = np.array(weights, dtype=np.float64)
    if cost is None:
        cost = np.ones_like(weights)
    total = weights.sum() if weights.ndim == 1 else np.nan
    if WEIGHT_TOL < abs(total - 1) <= WEIGHT_RENORMALIZE_TOL:
        warnings.warn("weights sum to %.17g, renormalizing" % total, RuntimeWarning)
        weights = weights / total
    model = Model(weights=weights, gamma=gamma, kernel=kernel, cost_density=cost, labels=labels)
    violations = validate(model)
    if violations:
        raise ModelError(violations)
    return model


def sbm(p, kernel, gamma=None, cost=None, labels=None):
    """
    Stochastic block model: one feature per block.
    :param p: Block masses. A scalar p stands for the two blocks (p, 1 - p).
    :param kernel: Block transmission rates.
    :param gamma: Block recovery rates (default 1).
    :param cost: Block cost density (default uniform).
    :return model: Model.
    """
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    if p.size == 1:
        p = np.array([p[0], 1 - p[0]])
    if gamma is None:
        gamma = np.ones_like(p)
    return make_model(p, gamma, kernel, cost, labels=labels)


def uniform_cost(model):
    """Returns a copy of the model with cost density 1 everywhere."""
    return model.replace(cost_density=np.ones(model.n))


def make_strategy(eta, n=None):
    """
    Validate a vaccination strategy.
    :param eta: Proportion of non-vaccinated individuals per feature.
    :param n: Expected dimension, if known.
    :return eta: Read-only float array.
    """
    x = np.array(eta, dtype=np.float64)
    if x.ndim != 1:
        raise StrategyError("strategy must be a vector, got shape %s" % (x.shape,))
    if n is not None and len(x) != n:
        raise StrategyError("strategy has length %d, expected %d" % (len(x), n))
    bad = np.flatnonzero(~((x >= 0) & (x <= 1)))
    if len(bad) > 0:
        raise StrategyError("eta[%d] = %r outside [0, 1]" % (bad[0], x[bad[0]]))
    x.setflags(write=False)
    return x


def cost(model, eta):
    """
    Affine vaccination cost: sum_i (1 - eta[i]) * cost_density[i] * weights[i].
    Doing nothing (eta = 1) costs nothing.
    """
    eta = make_strategy(eta, model.n)
    return float(np.sum((1 - eta) * model.cost_density * model.weights))


def normalize(model):
    """
    Transfer the cost density and recovery rates into the weights and kernel.
    The result has weights c * mu, kernel k(i, j) / (c(j) gamma(j)) and gamma = cost = 1, so its
    next-generation matrix equals the original one and its uniform cost equals the original cost.
    :param model: Model whose cost density is positive and integrates to 1.
    :return model0: Normalized model.
    """
    violations = list()
    for i in np.flatnonzero(model.cost_density <= 0):
        violations.append("cost[%d] not strictly positive" % i)
    total = float(np.sum(model.cost_density * model.weights))
    if abs(total - 1) > COST_NORMALIZATION_TOL:
        violations.append("cost integrates to %.17g != 1, rescale the cost density first" % total)
    if violations:
        raise ModelError(violations)

    c = model.cost_density
    weights = c * model.weights
    kernel = model.kernel / (c * model.gamma)[np.newaxis, :]
    ones = np.ones(model.n)
    return make_model(weights, ones, kernel, ones, labels=model.labels)


def model_from_dict(data):
    """
    Build a model from its JSON object.
    :param data: Dictionary with keys weights, gamma, kernel, cost and optionally labels.
    :return model: Validated Model.
    """
    if not isinstance(data, dict):
        raise ModelError(["model file must contain a JSON object"])
    unknown = sorted(set(data) - MODEL_KEYS)
    missing = sorted(REQUIRED_KEYS - set(data))
    violations = ["unknown key '%s'" % k for k in unknown] + ["missing key '%s'" % k for k in missing]
    if violations:
        raise ModelError(violations)
    try:
        return make_model(data["weights"], data["gamma"], data["kernel"], data["cost"],
                          labels=data.get("labels"))
    except (TypeError, ValueError) as e:
        if isinstance(e, ModelError):
            raise
        raise ModelError(["malformed model arrays: %s" % e])


def model_to_dict(model):
    data = dict()
    if model.labels is not None:
        data["labels"] = list(model.labels)
    data["weights"] = model.weights.tolist()
    data["gamma"] = model.gamma.tolist()
    data["cost"] = model.cost_density.tolist()
    data["kernel"] = model.kernel.tolist()
    return data


def load_model(path):
    """
    Load a model JSON file.
    :param path: Path to JSON file.
    :return model: Validated Model.
    """
    with open(path, encoding="utf-8") as fin:
        data = json.load(fin)
    model = model_from_dict(data)
    logger.info("Loaded model with %d features from %s", model.n, path)
    return model


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fout:
        json.dump(model_to_dict(model), fout, indent=2)

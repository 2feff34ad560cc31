import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from coupling import build_coupling, conjugate  # noqa: E402
from model import make_model, sbm  # noqa: E402
from reduction import blow_up  # noqa: E402

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")

SBM_P = 0.5
SBM_KERNEL = [[4.0, 1.0], [1.0, 2.0]]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def data_dir():
    return DATA_DIR


@pytest.fixture
def scalar_model():
    """Factory for one-feature models."""
    def make(k=3.0, gamma=1.0, cost=1.0):
        return make_model([1.0], [gamma], [[k]], [cost])
    return make


@pytest.fixture
def sbm_model():
    """The two-block SBM with p = 0.5, k = [[4, 1], [1, 2]], gamma = 1."""
    return sbm(SBM_P, SBM_KERNEL)


@pytest.fixture
def sbm_blowup(sbm_model):
    """Factory splitting the two-block SBM into sub-atoms; returns (big model, map to blocks)."""
    def make(pieces=2):
        return blow_up(sbm_model, pieces)
    return make


def _random_model(rng, n, zero_columns=0, kernel_high=3.0, cost=True):
    weights = rng.uniform(0.2, 1.0, n)
    weights /= weights.sum()
    gamma = rng.uniform(0.5, 2.0, n)
    kernel = rng.uniform(0.1, kernel_high, (n, n))
    if zero_columns:
        kernel[:, rng.choice(n, size=zero_columns, replace=False)] = 0
    density = rng.uniform(0.5, 2.0, n) if cost else np.ones(n)
    return make_model(weights, gamma, kernel, density)


@pytest.fixture
def random_model():
    """Factory for random valid models with positive kernels (optionally with zeroed columns)."""
    return _random_model


def _labels(rng, size, n_components):
    """Random surjection onto range(n_components)."""
    labels = np.concatenate([np.arange(n_components), rng.integers(0, n_components, size - n_components)])
    rng.shuffle(labels)
    return labels


def _random_pi(rng, n1, n2, n_components=None):
    if n_components is None:
        n_components = int(rng.integers(1, min(n1, n2) + 1))
    left = _labels(rng, n1, n_components)
    right = _labels(rng, n2, n_components)
    masses = rng.uniform(0.2, 1.0, n_components)
    masses /= masses.sum()
    pi = np.zeros((n1, n2))
    for c in range(n_components):
        rows = np.flatnonzero(left == c)
        cols = np.flatnonzero(right == c)
        block = rng.uniform(0.1, 1.0, (len(rows), len(cols)))
        pi[np.ix_(rows, cols)] = masses[c] * block / block.sum()
    return pi, left, right


@pytest.fixture
def random_pi():
    """
    Factory for block-structured random couplings: a random number of components, every left and right
    atom in exactly one of them, full positive blocks. Returns (pi, left labels, right labels).
    """
    return _random_pi


def _coupled_models(rng, n1, n2, n_components=None):
    pi, left, right = _random_pi(rng, n1, n2, n_components)
    k = left.max() + 1
    gamma = rng.uniform(0.5, 2.0, k)
    density = rng.uniform(0.5, 2.0, k)
    kernel = rng.uniform(0.2, 4.0, (k, k))
    model1 = make_model(pi.sum(axis=1), gamma[left], kernel[np.ix_(left, left)], density[left])
    model2 = make_model(pi.sum(axis=0), gamma[right], kernel[np.ix_(right, right)], density[right])
    return model1, model2, build_coupling(model1, model2, pi)


@pytest.fixture
def coupled_models():
    """Factory for model pairs with conjugate gamma, cost and kernel. Returns (model1, model2, coupling)."""
    return _coupled_models


def _preconjugate_strategy(rng, c, eta1):
    """A right strategy eta2 such that (eta1, eta2) is pre-conjugate, generally not conjugate."""
    base = conjugate(c, eta1, "left")
    noise = rng.uniform(-1.0, 1.0, c.shape[1])
    noise = noise - conjugate(c, conjugate(c, noise, "right"), "left")
    room = np.minimum(base, 1 - base)
    moving = np.abs(noise) > 1e-15
    scale = min(1.0, float(np.min(room[moving] / np.abs(noise[moving])))) if moving.any() else 0.0
    return np.clip(base + scale * noise, 0.0, 1.0)


@pytest.fixture
def preconjugate_strategy():
    return _preconjugate_strategy

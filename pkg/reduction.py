"""
Model reduction: merge features that behave identically (same recovery rate, same cost density,
same kernel rows and columns) and move strategies between the full and the reduced model.
Also the inverse constructions: blowing atoms up into sub-atoms and relabeling features through
a measure-preserving map.
"""
import json
import logging
from dataclasses import dataclass

import numpy as np

from coupling import deterministic_coupling
from model import make_model, make_strategy

logger = logging.getLogger(__name__)

REDUCTION_TOL = 1e-9
NEAR_MISS_FACTOR = 10
PUSHFORWARD_TOL = 1e-9


class PartitionError(ValueError):
    """Raised when blocks do not partition the feature indices."""


class ReductionError(ValueError):
    """Raised when a partition cannot be used to reduce a model."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join("%s varies by %.3g on blocks %s x %s" % (q, d, a, b)
                                   for q, a, b, d in self.violations))


@dataclass(frozen=True)
class FeaturePartition:
    """
    Partition of the feature indices {0, ..., n-1} into nonempty blocks.
    Blocks are kept sorted, and ordered by their smallest index.
    """
    blocks: tuple

    def __post_init__(self):
        blocks = [tuple(sorted(int(i) for i in b)) for b in self.blocks]
        if any(len(b) == 0 for b in blocks):
            raise PartitionError("empty block")
        blocks.sort(key=lambda b: b[0])
        indices = sorted(i for b in blocks for i in b)
        if indices != list(range(len(indices))):
            raise PartitionError("blocks must cover 0..n-1 exactly once, got %s" % (blocks,))
        object.__setattr__(self, "blocks", tuple(blocks))

    @property
    def n(self):
        return sum(len(b) for b in self.blocks)

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def block_of(self):
        labels = np.empty(self.n, dtype=np.int64)
        for b, block in enumerate(self.blocks):
            labels[list(block)] = b
        return labels

    @classmethod
    def from_labels(cls, labels):
        groups = dict()
        for i, label in enumerate(labels):
            groups.setdefault(label, []).append(i)
        return cls(tuple(groups.values()))

    @classmethod
    def singletons(cls, n):
        return cls(tuple((i,) for i in range(n)))


@dataclass(frozen=True)
class NearMiss:
    """Two blocks that would be mergeable with a slightly larger tolerance."""
    blocks: tuple
    deviation: float
    quantity: str


def _split(block, values, tol):
    """Split a block into runs of sorted values whose spread stays within tol."""
    order = sorted(block, key=lambda i: (values[i], i))
    parts = list()
    start = None
    for i in order:
        if start is None or values[i] - values[start] > tol:
            parts.append([])
            start = i
        parts[-1].append(i)
    return [tuple(sorted(p)) for p in parts]


def _split_by_range(block, lo, hi, tol):
    """Split a block into runs ordered by lo whose combined range [min lo, max hi] stays within tol."""
    order = sorted(range(len(block)), key=lambda k: (lo[k], block[k]))
    parts = list()
    run_lo = run_hi = None
    for k in order:
        if run_lo is None or max(run_hi, hi[k]) - run_lo > tol:
            parts.append([])
            run_lo, run_hi = lo[k], hi[k]
        run_hi = max(run_hi, hi[k])
        parts[-1].append(block[k])
    return [tuple(sorted(p)) for p in parts]


def _refine(blocks, signatures, tol):
    rounds = 0
    while True:
        rounds += 1
        refined = list()
        for block in blocks:
            parts = [block]
            for values in signatures:
                parts = [p for part in parts for p in _split(part, values, tol)]
            refined.extend(parts)
        refined.sort(key=lambda b: b[0])
        if len(refined) == len(blocks):
            return refined, rounds
        blocks = refined


def _repair(model, blocks, violation, tol):
    """
    Split one block involved in a violation. Every block pair that passed the per-signature
    refinement has kernel rows and columns within tol, so a kernel violation spreads across columns
    and splitting the column block by column ranges yields at least two parts.
    """
    quantity, a, b, deviation = violation
    if quantity in ("gamma", "cost"):
        values = model.gamma if quantity == "gamma" else model.cost_density
        target, parts = a, _split(blocks[a], values, tol)
    else:
        sub = model.kernel[np.ix_(list(blocks[a]), list(blocks[b]))]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        if np.any(hi - lo > tol):
            j = blocks[b][int(np.argmax(hi - lo))]
            target, parts = a, _split(blocks[a], model.kernel[:, j], tol)
        else:
            target, parts = b, _split_by_range(blocks[b], lo, hi, tol)
    logger.debug("%s varies by %.3g on blocks %d x %d, splitting block %d into %d",
                 quantity, deviation, a, b, target, len(parts))
    repaired = [blk for c, blk in enumerate(blocks) if c != target] + parts
    repaired.sort(key=lambda blk: blk[0])
    return repaired


def coarsest_reduction(model, tol=REDUCTION_TOL):
    """
    Coarsest partition on whose blocks gamma and the cost density are constant and on whose
    block pairs the kernel is constant. Starts from the partition induced by (gamma, cost) and
    refines it by kernel columns and rows until stable. Block pairs whose kernel entries still
    spread beyond tol (each column within tol, the whole submatrix not) are split further until
    reduction_violations reports nothing, so the result is always accepted by reduce.
    :param model: Model.
    :param tol: Absolute tolerance on parameter values.
    :return: FeaturePartition.
    """
    n = model.n
    signatures = [model.gamma, model.cost_density]
    signatures += [model.kernel[:, j] for j in range(n)]
    signatures += [model.kernel[i, :] for i in range(n)]

    blocks, rounds = _refine([tuple(range(n))], signatures, tol)
    logger.debug("Partition refinement stable after %d rounds: %d blocks", rounds, len(blocks))
    while True:
        violations = reduction_violations(model, FeaturePartition(tuple(blocks)), tol)
        if not violations:
            break
        blocks, _ = _refine(_repair(model, blocks, violations[0], tol), signatures, tol)
    return FeaturePartition(tuple(blocks))


def _spread(values):
    return float(values.max() - values.min()) if values.size else 0.0


def reduction_violations(model, partition, tol=REDUCTION_TOL):
    """
    Parameters that are not block-constant.
    :return violations: List of (quantity, block_a, block_b, deviation) with deviation > tol.
    """
    if partition.n != model.n:
        raise PartitionError("partition covers %d features, model has %d" % (partition.n, model.n))
    violations = list()
    for a, block in enumerate(partition.blocks):
        idx = list(block)
        for name, values in (("gamma", model.gamma), ("cost", model.cost_density)):
            d = _spread(values[idx])
            if d > tol:
                violations.append((name, a, a, d))
    for a, block_a in enumerate(partition.blocks):
        for b, block_b in enumerate(partition.blocks):
            d = _spread(model.kernel[np.ix_(list(block_a), list(block_b))])
            if d > tol:
                violations.append(("kernel", a, b, d))
    return violations


def near_misses(model, partition, tol=REDUCTION_TOL):
    """
    Pairs of blocks whose merge fails block-constancy by less than NEAR_MISS_FACTOR * tol.
    :return: List of NearMiss.
    """
    found = list()
    blocks = partition.blocks
    for a in range(len(blocks)):
        for b in range(a + 1, len(blocks)):
            merged = [blk for c, blk in enumerate(blocks) if c not in (a, b)] + [blocks[a] + blocks[b]]
            violations = reduction_violations(model, FeaturePartition(tuple(merged)), tol)
            if not violations:
                continue
            quantity, _, _, deviation = max(violations, key=lambda v: v[3])
            if deviation <= NEAR_MISS_FACTOR * tol:
                found.append(NearMiss(blocks=(a, b), deviation=deviation, quantity=quantity))
    return found


def _block_means(values, block_of, weights, n_blocks):
    mass = np.bincount(block_of, weights=weights, minlength=n_blocks)
    return np.bincount(block_of, weights=values * weights, minlength=n_blocks) / mass


def reduce(model, partition, tol=REDUCTION_TOL):
    """
    Merge the features of each block into one feature.
    :param model: Model.
    :param partition: Partition on which gamma, cost and kernel are block-constant.
    :param tol: Tolerance of the block-constancy check.
    :return (reduced, coupling): Reduced model and the deterministic coupling along the quotient map.
    """
    violations = reduction_violations(model, partition, tol)
    if violations:
        raise ReductionError(violations)
    block_of = partition.block_of
    nb = partition.n_blocks
    w = model.weights
    mass = np.bincount(block_of, weights=w, minlength=nb)
    indicator = np.zeros((nb, model.n))
    indicator[block_of, np.arange(model.n)] = w
    kernel = indicator @ model.kernel @ indicator.T / np.outer(mass, mass)
    labels = None
    if model.labels is not None:
        labels = ["+".join(model.labels[i] for i in block) for block in partition.blocks]

    reduced = make_model(mass, _block_means(model.gamma, block_of, w, nb), kernel,
                         _block_means(model.cost_density, block_of, w, nb), labels=labels)
    logger.info("Reduced %d features to %d", model.n, reduced.n)
    return reduced, deterministic_coupling(model, reduced, block_of)


def reduce_strategy(model, partition, eta):
    """
    Conditional expectation of a strategy given the partition: the weighted mean on each block.
    """
    eta = make_strategy(eta, model.n)
    return make_strategy(_block_means(eta, partition.block_of, model.weights, partition.n_blocks))


def lift_strategy(partition, eta_red):
    """Block-constant strategy on the full model taking the reduced value of each block."""
    eta_red = make_strategy(eta_red, partition.n_blocks)
    return make_strategy(eta_red[partition.block_of])


def blow_up(model, pieces):
    """
    Split every feature into sub-features sharing its parameters.
    :param model: Model.
    :param pieces: Number of equal pieces for every feature, or one entry per feature giving either a
                   number of equal pieces or the relative masses of the pieces.
    :return (big, phi): Blown-up model and the map from sub-features to the original features.
    """
    if np.isscalar(pieces):
        pieces = [int(pieces)] * model.n
    if len(pieces) != model.n:
        raise ValueError("pieces has %d entries, model has %d features" % (len(pieces), model.n))
    phi = list()
    weights = list()
    labels = list()
    for ell, piece in enumerate(pieces):
        fractions = np.full(int(piece), 1.0 / int(piece)) if np.isscalar(piece) else np.asarray(piece, dtype=float)
        if fractions.size == 0 or np.any(fractions <= 0):
            raise ValueError("feature %d must be split into pieces of positive mass" % ell)
        fractions = fractions / fractions.sum()
        for k, fraction in enumerate(fractions):
            phi.append(ell)
            weights.append(model.weights[ell] * fraction)
            name = model.labels[ell] if model.labels is not None else str(ell)
            labels.append("%s.%d" % (name, k))
    phi = np.array(phi, dtype=np.int64)
    big = make_model(weights, model.gamma[phi], model.kernel[np.ix_(phi, phi)], model.cost_density[phi],
                     labels=labels if model.labels is not None else None)
    return big, phi


def pull_back(model, phi, tol=PUSHFORWARD_TOL):
    """
    Relabel features through a measure-preserving map phi (phi pushes the weights onto themselves):
    the new model has gamma o phi, cost o phi and k(phi(.), phi(.)) on the same weights.
    :return (pulled, phi): Model coupled to `model` by the deterministic coupling along phi.
    """
    phi = np.array(phi, dtype=np.int64)
    if phi.shape != (model.n,) or np.any(phi < 0) or np.any(phi >= model.n):
        raise ValueError("phi must map the %d features into themselves" % model.n)
    pushforward = np.bincount(phi, weights=model.weights, minlength=model.n)
    deviation = np.abs(pushforward - model.weights).max()
    if deviation > tol:
        raise ValueError("phi does not preserve the weights (deviation %.3g)" % deviation)
    pulled = make_model(model.weights, model.gamma[phi], model.kernel[np.ix_(phi, phi)],
                        model.cost_density[phi], labels=model.labels)
    return pulled, phi


def load_partition(path):
    with open(path, encoding="utf-8") as fin:
        data = json.load(fin)
    if not isinstance(data, dict) or set(data) != {"blocks"}:
        raise PartitionError("partition file must contain exactly the key 'blocks'")
    return FeaturePartition(tuple(tuple(b) for b in data["blocks"]))


def save_partition(partition, path):
    with open(path, "w", encoding="utf-8") as fout:
        json.dump({"blocks": [list(b) for b in partition.blocks]}, fout)

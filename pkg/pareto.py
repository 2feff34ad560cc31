"""
Bi-objective outcomes (cost, loss) of vaccination strategies, Pareto and anti-Pareto frontiers on a
strategy grid, and the comparison of frontiers computed on two coupled models.
"""
import itertools
import logging
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from sklearn.metrics import pairwise_distances
from threadpoolctl import threadpool_limits

from dynamics import EQUILIBRIUM_TOL, infected_fraction
from model import cost, make_strategy
from next_generation import SPECTRAL_TOL, r_e
from reduction import lift_strategy

logger = logging.getLogger(__name__)

LOSS_KINDS = ("Re", "I")
FRONTIER_KINDS = ("pareto", "anti_pareto")
GRID_BUDGET = 10 ** 6
FRONTIER_ATOL = 1e-12  # costs or losses closer than this are ties
HAUSDORFF_TOL = 1e-8
CHUNKS_PER_WORKER = 4


class BudgetExceededError(ValueError):
    """Raised when a strategy grid is larger than the configured budget."""


class FrontierMismatchError(ValueError):
    """Raised when comparing frontiers of different kinds or losses."""


@dataclass(frozen=True, eq=False)
class Outcome:
    cost: float
    loss: float
    strategy: np.ndarray
    loss_kind: str


@dataclass(frozen=True)
class GridResolution:
    """How the strategy set was discretized: m steps per coordinate on `dims` coordinates."""
    m: int
    dims: int
    lifted: bool = False

    @property
    def size(self):
        return (self.m + 1) ** self.dims


@dataclass(frozen=True, eq=False)
class Frontier:
    kind: str
    loss_kind: str
    points: tuple
    grid_resolution: GridResolution = None
    polished: bool = False

    @property
    def costs(self):
        return np.array([p.cost for p in self.points])

    @property
    def losses(self):
        return np.array([p.loss for p in self.points])

    def as_array(self):
        """(cost, loss) coordinates, one row per point."""
        return np.column_stack([self.costs, self.losses])


@dataclass(frozen=True, eq=False)
class FrontierComparison:
    equal: bool
    hausdorff_distance: float
    witness: tuple

    def to_dict(self):
        return {"equal": self.equal, "hausdorff_distance": self.hausdorff_distance,
                "witness": [list(p) for p in self.witness]}


def _check_loss_kind(loss_kind):
    if loss_kind not in LOSS_KINDS:
        raise ValueError("loss_kind must be one of %s, got %r" % (LOSS_KINDS, loss_kind))


def evaluate(model, eta, loss_kind="Re", spectral_tol=SPECTRAL_TOL, equilibrium_tol=EQUILIBRIUM_TOL):
    """
    Outcome (C(eta), L(eta)) of a strategy.
    :param model: Model.
    :param eta: Strategy.
    :param loss_kind: "Re" for the effective reproduction number, "I" for the infected fraction at equilibrium.
    :return: Outcome.
    """
    _check_loss_kind(loss_kind)
    eta = make_strategy(eta, model.n)
    if loss_kind == "Re":
        loss = r_e(model, eta, tol=spectral_tol)
    else:
        loss = infected_fraction(model, eta, tol=equilibrium_tol)
    return Outcome(cost=cost(model, eta), loss=float(loss), strategy=eta, loss_kind=loss_kind)


def grid_strategies(n, m):
    """
    Strategies of {0, 1/m, ..., 1}^n in lexicographic order.
    :return: Array of shape ((m + 1)^n, n).
    """
    if m < 1:
        raise ValueError("grid resolution m must be at least 1")
    levels = np.arange(m + 1) / m
    return np.array(list(itertools.product(levels, repeat=n)), dtype=np.float64).reshape(-1, n)


def _evaluate_chunk(model, strategies, loss_kind, spectral_tol, equilibrium_tol):
    with threadpool_limits(limits=1):
        return [evaluate(model, eta, loss_kind, spectral_tol, equilibrium_tol) for eta in strategies]


def evaluate_many(model, strategies, loss_kind="Re", workers=1, spectral_tol=SPECTRAL_TOL,
                  equilibrium_tol=EQUILIBRIUM_TOL):
    """
    Evaluate a list of strategies, optionally in parallel.
    Results are returned in the input order whatever the number of workers.
    """
    strategies = list(strategies)
    if workers == 1 or len(strategies) < 2:
        return _evaluate_chunk(model, strategies, loss_kind, spectral_tol, equilibrium_tol)
    n_chunks = min(len(strategies), max(1, workers) * CHUNKS_PER_WORKER)
    chunks = [c for c in np.array_split(np.arange(len(strategies)), n_chunks) if len(c) > 0]
    results = Parallel(n_jobs=workers)(
        delayed(_evaluate_chunk)(model, [strategies[i] for i in c], loss_kind, spectral_tol, equilibrium_tol)
        for c in chunks)
    return [outcome for chunk in results for outcome in chunk]


def enumerate_outcomes(model, loss_kind="Re", m=10, budget=GRID_BUDGET, workers=1, partition=None,
                       spectral_tol=SPECTRAL_TOL, equilibrium_tol=EQUILIBRIUM_TOL):
    """
    Outcomes of every strategy on the grid {0, 1/m, ..., 1}^n, in lexicographic order.
    :param model: Model.
    :param loss_kind: "Re" or "I".
    :param m: Grid resolution per coordinate.
    :param budget: Largest accepted number of grid strategies.
    :param workers: Number of joblib workers.
    :param partition: If given, the grid is laid on the blocks of this partition and lifted to block-constant
                      strategies, so that two coupled models can be evaluated on corresponding strategies.
    :return outcomes: List of Outcome.
    """
    _check_loss_kind(loss_kind)
    dims = model.n if partition is None else partition.n_blocks
    resolution = GridResolution(m=m, dims=dims, lifted=partition is not None)
    if resolution.size > budget:
        raise BudgetExceededError("grid of %d strategies exceeds the budget of %d, reduce the model first or lower m"
                                  % (resolution.size, budget))
    strategies = grid_strategies(dims, m)
    if partition is not None:
        strategies = [lift_strategy(partition, eta) for eta in strategies]
    logger.info("Evaluating %d strategies (loss %s, %d workers)", resolution.size, loss_kind, workers)
    return evaluate_many(model, strategies, loss_kind, workers, spectral_tol, equilibrium_tol)


def _representatives(outcomes, sign, atol):
    """
    One outcome per group of tied costs: the best loss, then the lexicographically smallest strategy
    among losses tied with it. Costs and losses are multiplied by `sign` before comparing.
    """
    ordered = sorted(outcomes, key=lambda o: (sign * o.cost, sign * o.loss, tuple(o.strategy)))
    groups = list()
    for o in ordered:
        if groups and abs(o.cost - groups[-1][0].cost) <= atol:
            groups[-1].append(o)
        else:
            groups.append([o])
    chosen = list()
    for group in groups:
        best = min(sign * o.loss for o in group)
        tied = [o for o in group if sign * o.loss <= best + atol]
        chosen.append(min(tied, key=lambda o: tuple(o.strategy)))
    return chosen


def frontier(outcomes, kind="pareto", atol=FRONTIER_ATOL, grid_resolution=None):
    """
    Non-dominated outcomes.
    pareto keeps the outcomes for which no other one has lower cost and lower loss (one strictly);
    anti_pareto keeps those for which no other one has higher cost and higher loss.
    Ties on (cost, loss) keep the lexicographically smallest strategy.
    :param outcomes: Nonempty list of Outcome with a common loss kind.
    :param kind: "pareto" or "anti_pareto".
    :return: Frontier, points sorted by increasing cost.
    """
    if kind not in FRONTIER_KINDS:
        raise ValueError("kind must be one of %s, got %r" % (FRONTIER_KINDS, kind))
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("cannot compute the frontier of an empty outcome set")
    loss_kinds = {o.loss_kind for o in outcomes}
    if len(loss_kinds) > 1:
        raise FrontierMismatchError("outcomes mix loss kinds %s" % sorted(loss_kinds))

    sign = 1 if kind == "pareto" else -1
    kept = list()
    best = np.inf
    for o in _representatives(outcomes, sign, atol):
        if sign * o.loss < best - atol:
            kept.append(o)
            best = sign * o.loss
    kept.sort(key=lambda o: o.cost)
    logger.debug("%s frontier keeps %d of %d outcomes", kind, len(kept), len(outcomes))
    return Frontier(kind=kind, loss_kind=loss_kinds.pop(), points=tuple(kept), grid_resolution=grid_resolution)


def compare_frontiers(f1, f2, tol=HAUSDORFF_TOL):
    """
    Hausdorff distance between two frontiers in the (cost, loss) plane.
    :return: FrontierComparison, whose witness is the pair of points realizing the distance.
    """
    if f1.kind != f2.kind or f1.loss_kind != f2.loss_kind:
        raise FrontierMismatchError("cannot compare a %s/%s frontier with a %s/%s frontier"
                                    % (f1.kind, f1.loss_kind, f2.kind, f2.loss_kind))
    p1 = f1.as_array()
    p2 = f2.as_array()
    d = pairwise_distances(p1, p2)
    nearest2 = d.min(axis=1)
    nearest1 = d.min(axis=0)
    i = int(np.argmax(nearest2))
    j = int(np.argmax(nearest1))
    if nearest2[i] >= nearest1[j]:
        distance = float(nearest2[i])
        witness = (tuple(p1[i]), tuple(p2[int(np.argmin(d[i]))]))
    else:
        distance = float(nearest1[j])
        witness = (tuple(p1[int(np.argmin(d[:, j]))]), tuple(p2[j]))
    return FrontierComparison(equal=distance <= tol, hausdorff_distance=distance, witness=witness)


def _neighbours(eta, step):
    for i in range(len(eta)):
        for delta in (-step, step):
            moved = eta.copy()
            moved[i] = min(1.0, max(0.0, moved[i] + delta))
            if moved[i] != eta[i]:
                yield moved


def polish_frontier(model, front, m, rounds=1, workers=1, spectral_tol=SPECTRAL_TOL,
                    equilibrium_tol=EQUILIBRIUM_TOL):
    """
    Refine a grid frontier by evaluating coordinate moves of size 1 / m^2 around each frontier strategy.
    The result is flagged as polished and must not be compared with plain grid frontiers.
    """
    step = 1.0 / m ** 2
    points = list(front.points)
    for _ in range(rounds):
        candidates = [moved for o in points for moved in _neighbours(np.array(o.strategy), step)]
        extra = evaluate_many(model, candidates, front.loss_kind, workers, spectral_tol, equilibrium_tol)
        points = list(frontier(points + extra, front.kind).points)
    logger.info("Polished %s frontier: %d -> %d points", front.kind, len(front.points), len(points))
    return Frontier(kind=front.kind, loss_kind=front.loss_kind, points=tuple(points),
                    grid_resolution=front.grid_resolution, polished=True)


def write_frontier_csv(front, path):
    """
    Write a frontier as CSV: cost, loss and the strategy coordinates, 17 significant digits.
    """
    n = len(front.points[0].strategy) if front.points else 0
    with open(path, "w") as fout:
        fout.write(",".join(["cost", "loss"] + ["eta_%d" % i for i in range(n)]) + "\n")
        for o in front.points:
            fout.write(",".join("%.17g" % x for x in [o.cost, o.loss] + list(o.strategy)) + "\n")


def read_frontier_csv(path, kind="pareto", loss_kind="Re"):
    """
    Load a frontier CSV file.
    :return: Frontier, points in file order.
    """
    _check_loss_kind(loss_kind)
    points = list()
    with open(path) as fin:
        header = fin.readline().strip().split(",")
        if header[:2] != ["cost", "loss"]:
            raise ValueError("%s is not a frontier file" % path)
        for line in fin:
            if not line.strip():
                continue
            values = [float(x) for x in line.strip().split(",")]
            points.append(Outcome(cost=values[0], loss=values[1], strategy=make_strategy(values[2:]),
                                  loss_kind=loss_kind))
    return Frontier(kind=kind, loss_kind=loss_kind, points=tuple(points))

"""
Couplings between two finite feature spaces and the conjugation of functions and kernels.

A coupling is a joint mass matrix pi whose marginals are the weights of the two models.
The intersection sigma-field of the two coordinates is generated by the connected components
of the bipartite support graph of pi: conjugating a function f on one side means averaging f
over each component (with the side's weights) and spreading the average on the other side.
"""
import json
import logging
from dataclasses import dataclass

import numpy as np
from networkx.utils import UnionFind

logger = logging.getLogger(__name__)

MARGINAL_TOL = 1e-9
CONJUGACY_TOL = 1e-10
SUPPORT_EPS = 0.0  # pi[i][j] > SUPPORT_EPS is an edge of the support graph
MATERIALIZE_MAX = 8

SIDES = ("left", "right")
COUPLING_KEYS = ("pi", "phi")


class CouplingError(ValueError):
    """Raised when a coupling does not have the prescribed marginals."""

    def __init__(self, message, deviation=None, side=None, index=None):
        self.deviation = deviation
        self.side = side
        self.index = index
        super().__init__(message)


@dataclass(frozen=True)
class Component:
    """An atom of the intersection sigma-field: left indices, right indices and mass."""
    left: tuple
    right: tuple
    mass: float


@dataclass(frozen=True, eq=False)
class Coupling:
    pi: np.ndarray
    left_weights: np.ndarray
    right_weights: np.ndarray
    components: tuple
    left_component: np.ndarray
    right_component: np.ndarray
    support_eps: float = SUPPORT_EPS
    phi: np.ndarray = None

    @property
    def shape(self):
        return self.pi.shape

    @property
    def masses(self):
        return np.array([c.mass for c in self.components])

    def support(self):
        """Row and column indices of the support edges."""
        return np.nonzero(self.pi > self.support_eps)

    def side_masses(self, side):
        """Component masses computed from the weights of `side`."""
        weights, labels, _ = self.side_arrays(side)
        return np.bincount(labels, weights=weights, minlength=len(self.components))

    def side_arrays(self, side):
        """(weights, component labels) of `side` and component labels of the opposite side."""
        if side == "left":
            return self.left_weights, self.left_component, self.right_component
        if side == "right":
            return self.right_weights, self.right_component, self.left_component
        raise ValueError("side must be one of %s" % (SIDES,))


def _components(pi, support_eps):
    """
    Connected components of the bipartite support graph, merged with union-find.
    Components are ordered by their smallest left index.
    """
    n1, n2 = pi.shape
    sets = UnionFind([("L", i) for i in range(n1)] + [("R", j) for j in range(n2)])
    rows, cols = np.nonzero(pi > support_eps)
    for i, j in zip(rows.tolist(), cols.tolist()):
        sets.union(("L", i), ("R", j))

    groups = list()
    for group in sets.to_sets():
        left = tuple(sorted(i for s, i in group if s == "L"))
        right = tuple(sorted(j for s, j in group if s == "R"))
        if not left or not right:
            raise CouplingError("atom %s has no support edge" % (("left", left) if left else ("right", right),))
        groups.append((left, right))
    groups.sort(key=lambda lr: lr[0][0])

    components = list()
    left_component = np.empty(n1, dtype=np.int64)
    right_component = np.empty(n2, dtype=np.int64)
    for c, (left, right) in enumerate(groups):
        mass = float(pi[np.ix_(left, right)].sum())
        components.append(Component(left, right, mass))
        left_component[list(left)] = c
        right_component[list(right)] = c
    return tuple(components), left_component, right_component


def _check_marginal(pi_marginal, weights, side, tol):
    if pi_marginal.shape != weights.shape:
        raise CouplingError("pi has %d %s atoms, model has %d" % (len(pi_marginal), side, len(weights)),
                            side=side)
    deviation = np.abs(pi_marginal - weights)
    index = int(np.argmax(deviation))
    if deviation[index] > tol:
        raise CouplingError("%s marginal mismatch: max deviation %.3g at index %d"
                            % (side, deviation[index], index), deviation=float(deviation[index]),
                            side=side, index=index)


def _coupling(pi, left_weights, right_weights, support_eps, phi=None):
    components, left_component, right_component = _components(pi, support_eps)
    for array in (pi, left_weights, right_weights, left_component, right_component):
        array.setflags(write=False)
    logger.debug("Coupling %s has %d components", pi.shape, len(components))
    return Coupling(pi=pi, left_weights=left_weights, right_weights=right_weights,
                    components=components, left_component=left_component,
                    right_component=right_component, support_eps=support_eps, phi=phi)


def _as_mass_matrix(pi):
    pi = np.array(pi, dtype=np.float64)
    if pi.ndim != 2:
        raise CouplingError("pi must be a matrix, got shape %s" % (pi.shape,))
    if np.any(~np.isfinite(pi)) or np.any(pi < 0):
        raise CouplingError("pi must have finite nonnegative entries")
    return pi


def build_coupling(model1, model2, pi, tol=MARGINAL_TOL, support_eps=SUPPORT_EPS):
    """
    Coupling between the feature spaces of two models.
    :param model1: Left model.
    :param model2: Right model.
    :param pi: Joint mass matrix (n1 x n2) whose marginals are the models' weights.
    :param tol: Allowed marginal deviation.
    :param support_eps: Entries above this value are support edges.
    :return: Coupling.
    """
    pi = _as_mass_matrix(pi)
    _check_marginal(pi.sum(axis=1), model1.weights, "left", tol)
    _check_marginal(pi.sum(axis=0), model2.weights, "right", tol)
    return _coupling(pi, model1.weights.copy(), model2.weights.copy(), support_eps)


def coupling_from_matrix(pi, support_eps=SUPPORT_EPS):
    """Coupling whose marginals are read off the joint mass matrix."""
    pi = _as_mass_matrix(pi)
    total = pi.sum()
    if abs(total - 1) > MARGINAL_TOL:
        raise CouplingError("pi has total mass %.17g != 1" % total, deviation=abs(total - 1))
    return _coupling(pi, pi.sum(axis=1), pi.sum(axis=0), support_eps)


def deterministic_coupling(model1, model2, phi, tol=MARGINAL_TOL):
    """
    Coupling (X, phi(X)) with X distributed as the left weights.
    :param model1: Left model.
    :param model2: Right model, whose weights must be the pushforward of the left weights by phi.
    :param phi: Right index of every left index.
    :return: Coupling with `phi` recorded.
    """
    phi = np.array(phi, dtype=np.int64)
    n1, n2 = model1.n, model2.n
    if phi.shape != (n1,):
        raise CouplingError("phi has length %d, left model has %d features" % (len(phi), n1))
    if np.any(phi < 0) or np.any(phi >= n2):
        raise CouplingError("phi maps outside the %d right features" % n2)
    pushforward = np.bincount(phi, weights=model1.weights, minlength=n2)
    _check_marginal(pushforward, model2.weights, "right", tol)
    pi = np.zeros((n1, n2))
    pi[np.arange(n1), phi] = model1.weights
    phi.setflags(write=False)
    return _coupling(pi, model1.weights.copy(), model2.weights.copy(), SUPPORT_EPS, phi=phi)


def conjugate(c, f, side="left"):
    """
    Conjugate of a function: its conditional expectation given the intersection sigma-field,
    read as a function on the other side.
    :param c: Coupling.
    :param f: Function on `side`.
    :param side: "left" or "right", the side f lives on.
    :return: Function on the opposite side.
    """
    weights, labels, other = c.side_arrays(side)
    f = np.asarray(f, dtype=np.float64)
    if f.shape != weights.shape:
        raise ValueError("function has length %d, %s side has %d atoms" % (len(f), side, len(weights)))
    sums = np.bincount(labels, weights=f * weights, minlength=len(c.components))
    return (sums / c.side_masses(side))[other]


def is_conjugate(c, f1, f2, tol=CONJUGACY_TOL, method="support"):
    """
    Whether (f1, f2) is a conjugate pair, i.e. f1(Z1) = f2(Z2) almost surely.
    :param method: "support" scans the support edges, "definition" checks f1 = f2* and f2 = f1*.
    """
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if method == "support":
        rows, cols = c.support()
        if len(f1) != c.shape[0] or len(f2) != c.shape[1]:
            raise ValueError("function lengths %d, %d do not match coupling %s" % (len(f1), len(f2), c.shape))
        return bool(np.all(np.abs(f1[rows] - f2[cols]) <= tol))
    if method == "definition":
        return bool(np.all(np.abs(conjugate(c, f1, "left") - f2) <= tol)
                    and np.all(np.abs(conjugate(c, f2, "right") - f1) <= tol))
    raise ValueError("unknown method %r" % method)


def is_preconjugate(c, f1, f2, tol=CONJUGACY_TOL):
    """Whether (f1, f2) is pre-conjugate: the pair (f2*, f1*) is conjugate."""
    return is_conjugate(c, conjugate(c, f2, "right"), conjugate(c, f1, "left"), tol)


class ExtendedCoupling:
    """
    Coupling of the pair spaces E1 x E1 and E2 x E2 through two independent copies of a base coupling.
    Its components are the ordered pairs of base components; the pair-space law is never built
    unless materialize() is called.
    """

    def __init__(self, base):
        self.base = base

    @property
    def n_components(self):
        return len(self.base.components) ** 2

    def component_of(self, x, y, side="left"):
        """Extended component of the pair (x, y) on `side`, as a pair of base components."""
        _, labels, _ = self.base.side_arrays(side)
        return int(labels[x]), int(labels[y])

    def materialize(self, max_size=MATERIALIZE_MAX):
        """
        Explicit coupling between the pair spaces, pair (x, y) being index x * n + y.
        Only for small spaces; used to check the product structure by brute force.
        """
        n1, n2 = self.base.shape
        if max(n1, n2) > max_size:
            raise ValueError("refusing to materialize an extended coupling of size %d > %d" % (max(n1, n2), max_size))
        pi = np.einsum("ac,bd->abcd", self.base.pi, self.base.pi).reshape(n1 * n1, n2 * n2)
        left = np.outer(self.base.left_weights, self.base.left_weights).ravel()
        right = np.outer(self.base.right_weights, self.base.right_weights).ravel()
        return _coupling(pi, left, right, self.base.support_eps)


def kernel_conjugate(e, kernel, side="left"):
    """
    Conjugate of a kernel through the extended coupling: the kernel is averaged over each pair of
    components (A, B) with weights w(i) w(j) and the average is spread on the other side's A x B.
    :param e: ExtendedCoupling.
    :param kernel: Square matrix on `side`.
    :param side: "left" or "right".
    :return: Square matrix on the opposite side.
    """
    c = e.base
    weights, labels, other = c.side_arrays(side)
    kernel = np.asarray(kernel, dtype=np.float64)
    n = len(weights)
    if kernel.shape != (n, n):
        raise ValueError("kernel has shape %s, %s side has %d atoms" % (kernel.shape, side, n))
    indicator = np.zeros((len(c.components), n))
    indicator[labels, np.arange(n)] = weights
    masses = c.side_masses(side)
    block = indicator @ kernel @ indicator.T / np.outer(masses, masses)
    return block[np.ix_(other, other)]


def kernel_violation(e, kernel1, kernel2):
    """
    Largest |kernel1(x1, y1) - kernel2(x2, y2)| over pairs of support edges (x1, x2), (y1, y2).
    :return (deviation, location): location is ((x1, y1), (x2, y2)) or None without support.
    """
    rows, cols = e.base.support()
    k1 = np.asarray(kernel1, dtype=np.float64)[np.ix_(rows, rows)]
    k2 = np.asarray(kernel2, dtype=np.float64)[np.ix_(cols, cols)]
    diff = np.abs(k1 - k2)
    a, b = np.unravel_index(np.argmax(diff), diff.shape)
    location = ((int(rows[a]), int(rows[b])), (int(cols[a]), int(cols[b])))
    return float(diff[a, b]), location


def is_kernel_conjugate(e, kernel1, kernel2, tol=CONJUGACY_TOL):
    """Whether two kernels are conjugate through the extended coupling."""
    deviation, _ = kernel_violation(e, kernel1, kernel2)
    return deviation <= tol


def _function_violation(c, f1, f2):
    rows, cols = c.support()
    diff = np.abs(np.asarray(f1)[rows] - np.asarray(f2)[cols])
    a = int(np.argmax(diff))
    return float(diff[a]), (int(rows[a]), int(cols[a]))


@dataclass(frozen=True)
class ConjugacyReport:
    """Which model parameters are conjugate through a coupling, with the largest violations."""
    gamma: bool
    cost: bool
    kernel: bool
    ngo_kernel: bool
    violations: dict

    @property
    def passed(self):
        return self.gamma and self.cost and self.kernel and self.ngo_kernel

    def to_dict(self):
        return {"gamma_conjugate": self.gamma, "cost_conjugate": self.cost,
                "kernel_conjugate": self.kernel, "ngo_kernel_conjugate": self.ngo_kernel,
                "passed": self.passed, "violations": self.violations}


def check_model_conjugacy(c, model1, model2, tol=CONJUGACY_TOL):
    """
    Check the hypotheses under which two coupled models share their outcomes:
    gamma, cost density, kernel and next-generation kernel k / gamma conjugate.
    :param c: Coupling between the feature spaces of model1 and model2.
    :return: ConjugacyReport.
    """
    if c.shape != (model1.n, model2.n):
        raise CouplingError("coupling of shape %s does not match models of sizes %d and %d"
                            % (c.shape, model1.n, model2.n))
    e = ExtendedCoupling(c)
    violations = dict()
    checks = dict()
    for name, f1, f2 in (("gamma", model1.gamma, model2.gamma),
                         ("cost", model1.cost_density, model2.cost_density)):
        deviation, (i, j) = _function_violation(c, f1, f2)
        checks[name] = deviation <= tol
        violations[name] = {"deviation": deviation, "left": i, "right": j}
    for name, k1, k2 in (("kernel", model1.kernel, model2.kernel),
                         ("ngo_kernel", model1.ngo_kernel, model2.ngo_kernel)):
        deviation, (left, right) = kernel_violation(e, k1, k2)
        checks[name] = deviation <= tol
        violations[name] = {"deviation": deviation, "left": list(left), "right": list(right)}
    report = ConjugacyReport(violations=violations, **checks)
    logger.info("Conjugacy check: %s", ", ".join("%s=%s" % kv for kv in checks.items()))
    return report


def coupling_to_dict(c):
    if c.phi is not None:
        return {"phi": c.phi.tolist()}
    return {"pi": c.pi.tolist()}


def coupling_from_dict(data, model1=None, model2=None, tol=MARGINAL_TOL):
    """
    Build a coupling from its JSON object, {"pi": [[...]]} or {"phi": [...]}.
    The models are required for "phi" and, when given, checked against the marginals of "pi".
    """
    if not isinstance(data, dict) or len(data) != 1 or next(iter(data)) not in COUPLING_KEYS:
        raise CouplingError("coupling file must contain exactly one of the keys %s" % (COUPLING_KEYS,))
    if "phi" in data:
        if model1 is None or model2 is None:
            raise CouplingError("a deterministic coupling needs both models")
        return deterministic_coupling(model1, model2, data["phi"], tol=tol)
    if model1 is None or model2 is None:
        return coupling_from_matrix(data["pi"])
    return build_coupling(model1, model2, data["pi"], tol=tol)


def load_coupling(path, model1=None, model2=None, tol=MARGINAL_TOL):
    with open(path, encoding="utf-8") as fin:
        data = json.load(fin)
    return coupling_from_dict(data, model1, model2, tol=tol)


def save_coupling(c, path):
    with open(path, "w", encoding="utf-8") as fout:
        json.dump(coupling_to_dict(c), fout)

"""
SIS dynamics with vaccination: the vector field F_eta(g) = (1 - g) T_{k eta}(g) - gamma g,
RK4 trajectories, the maximal equilibrium and the equilibrium fraction of infected individuals.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from model import make_strategy
from next_generation import SPECTRAL_TOL, apply_kernel, r_e

logger = logging.getLogger(__name__)

EQUILIBRIUM_TOL = 1e-10
MAX_ITER = 100000
NEAR_CRITICAL = 1e-3  # |R_e - 1| below which the fixed-point iteration slows down
NEAR_CRITICAL_ITER_FACTOR = 100
NEAR_CRITICAL_TOL = 1e-8
NEWTON_MAX_ITER = 200
SNAP_THRESHOLD = 1e-9  # R_e <= 1 + SNAP_THRESHOLD gives the disease-free maximal equilibrium
MONOTONE_SLACK = 1e-12
CLAMP_FACTOR = 10
FALLBACK_DOUBLINGS = 4


class StepSizeError(RuntimeError):
    """Raised when an RK4 step leaves [0, 1]^n by more than the clamp allowance."""


class EquilibriumError(RuntimeError):
    """Raised when the maximal equilibrium cannot be computed."""


@dataclass(frozen=True, eq=False)
class TrajectoryState:
    t: float
    u: np.ndarray


@dataclass(frozen=True, eq=False)
class Equilibrium:
    """
    Equilibrium g of F_eta with its residual |F_eta(g)|_inf.
    is_maximal records that g was obtained from the all-infected state.
    """
    g: np.ndarray
    residual: float
    is_maximal: bool = True
    iterations: int = 0
    method: str = "fixed_point"
    warning: str = None


def vector_field(model, eta, g):
    """
    F_eta(g) = (1 - g) * T_{k eta}(g) - gamma * g.
    :param model: Model.
    :param eta: Strategy.
    :param g: Vector in [0, 1]^n.
    :return: Vector of length n.
    """
    g = np.asarray(g, dtype=np.float64)
    return (1 - g) * apply_kernel(model, g, eta, kernel="k") - model.gamma * g


def default_step(model):
    """RK4 step scaled by the fastest rate in the model."""
    return 0.01 / np.max(model.gamma + model.kernel.sum(axis=1))


def integrate(model, eta, u0, t_end, dt=None, record_every=1):
    """
    Integrate du/dt = F_eta(u) with classical fixed-step RK4.
    Each state is clamped to [0, 1]^n; clamping by more than CLAMP_FACTOR * dt^5 raises StepSizeError.
    :param model: Model.
    :param eta: Strategy.
    :param u0: Initial state in [0, 1]^n.
    :param t_end: Final time.
    :param dt: Step size (default: default_step(model)).
    :param record_every: Keep one state out of `record_every` steps (the final state is always kept).
    :return states: List of TrajectoryState, starting at t = 0.
    """
    eta = make_strategy(eta, model.n)
    u = np.array(u0, dtype=np.float64)
    if len(u) != model.n:
        raise ValueError("u0 has length %d, model has %d features" % (len(u), model.n))
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("u0 must lie in [0, 1]^n")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if dt is None:
        dt = default_step(model)
    if dt <= 0:
        raise ValueError("dt must be positive")

    steps = math.ceil(t_end / dt - 1e-9) if t_end > 0 else 0
    allowance = CLAMP_FACTOR * dt ** 5
    states = [TrajectoryState(0.0, u.copy())]
    t = 0.0
    for step in range(1, steps + 1):
        h = min(dt, t_end - t)
        k1 = vector_field(model, eta, u)
        k2 = vector_field(model, eta, u + h / 2 * k1)
        k3 = vector_field(model, eta, u + h / 2 * k2)
        k4 = vector_field(model, eta, u + h * k3)
        u_next = u + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        clamped = np.clip(u_next, 0, 1)
        excess = np.abs(u_next - clamped).max()
        if excess > allowance:
            raise StepSizeError("RK4 step at t=%.6g left [0, 1] by %.3g (allowed %.3g), reduce dt"
                                % (t, excess, allowance))
        u = clamped
        t = step * dt if step < steps else t_end
        if step % record_every == 0 or step == steps:
            states.append(TrajectoryState(t, u.copy()))
    return states


def _fixed_point(model, eta, tol, max_iter):
    """
    Iterate g <- T(g) / (gamma + T(g)) from g = 1. Returns (g, residual, iterations, converged).
    The distance to the limit is estimated as step * ratio / (1 - ratio) from the contraction ratio
    of successive steps; steps at the rounding level are accepted as they are.
    """
    gamma_max = model.gamma.max()
    g = np.ones(model.n)
    residual = np.inf
    prev_step = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        tg = apply_kernel(model, g, eta, kernel="k")
        g_next = tg / (model.gamma + tg)
        if np.any(g_next > g + MONOTONE_SLACK):
            i = int(np.argmax(g_next - g))
            raise EquilibriumError("fixed-point iterates increased at feature %d (%.17g > %.17g)"
                                   % (i, g_next[i], g[i]))
        step = np.abs(g_next - g).max()
        g = g_next
        if step <= MONOTONE_SLACK:
            error = step
        elif it > 1 and step < prev_step:
            ratio = step / prev_step
            error = max(step, step * ratio / (1 - ratio))
        else:
            error = np.inf
        prev_step = step
        if error <= tol:
            residual = np.abs(vector_field(model, eta, g)).max()
            if residual <= 10 * tol * gamma_max:
                return g, residual, it, True
    return g, residual, it, False


def _jacobian(model, eta, g):
    """dF_i/dg_j = (1 - g_i) K_ij eta_j w_j - delta_ij (T_i(g) + gamma_i)."""
    tg = apply_kernel(model, g, eta, kernel="k")
    jac = (1 - g)[:, np.newaxis] * model.kernel * (eta * model.weights)[np.newaxis, :]
    jac[np.diag_indices(model.n)] -= tg + model.gamma
    return jac


def _newton(model, eta, tol, max_iter=NEWTON_MAX_ITER):
    """
    Newton iteration on F_eta(g) = 0 from g = 1, clipped to [0, 1]^n.
    The second derivatives of F_eta are nonpositive, so the iterates decrease to the maximal equilibrium.
    Stops on a step below tol * max(g), or on a step that stopped shrinking once below
    NEAR_CRITICAL_TOL * max(g) (rounding floor of an ill-conditioned Jacobian).
    Returns (g, residual, iterations, converged).
    """
    gamma_max = model.gamma.max()
    g = np.ones(model.n)
    residual = np.inf
    prev_step = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        try:
            delta = scipy.linalg.solve(_jacobian(model, eta, g), -vector_field(model, eta, g))
        except (scipy.linalg.LinAlgError, ValueError) as e:
            logger.warning("Newton step failed at iteration %d: %s", it, e)
            break
        g_next = np.clip(g + delta, 0, 1)
        step = np.abs(g_next - g).max()
        g = g_next
        scale = g.max()
        if scale == 0:
            logger.warning("Newton iteration collapsed on the disease-free equilibrium")
            break
        if step <= tol * scale or (step >= prev_step and step <= NEAR_CRITICAL_TOL * scale):
            residual = np.abs(vector_field(model, eta, g)).max()
            if residual <= 10 * tol * gamma_max:
                return g, residual, it, True
        prev_step = step
    return g, residual, it, False


def _ode_fallback(model, eta, g, tol):
    gamma_max = model.gamma.max()
    t_end = 100 / model.gamma.min()
    for _ in range(FALLBACK_DOUBLINGS):
        logger.info("Integrating the SIS dynamics up to t=%.3g", t_end)
        g = integrate(model, eta, g, t_end, record_every=1000000)[-1].u
        residual = np.abs(vector_field(model, eta, g)).max()
        if residual <= 10 * tol * gamma_max:
            return g, residual
        t_end *= 2
    raise EquilibriumError("maximal equilibrium not reached: residual %.3g after ODE fallback" % residual)


def maximal_equilibrium(model, eta, tol=EQUILIBRIUM_TOL, max_iter=MAX_ITER, spectral_tol=SPECTRAL_TOL):
    """
    Maximal equilibrium of the vaccinated SIS dynamics, the limit of the trajectory started at u = 1.
    Computed by the monotone fixed-point iteration g <- T_{k eta}(g) / (gamma + T_{k eta}(g)) from g = 1.
    Near criticality (|R_e - 1| < NEAR_CRITICAL) the fixed-point iteration contracts too slowly and
    Newton iteration from g = 1 is used instead, with the relaxed fixed point as a fallback.
    :param model: Model.
    :param eta: Strategy.
    :param tol: Tolerance on successive iterates; the residual |F_eta(g)| must be below 10 * tol * max(gamma).
    :param max_iter: Iteration cap before falling back on ODE integration.
    :return: Equilibrium.
    """
    eta = make_strategy(eta, model.n)
    if tol <= 0:
        raise ValueError("tol must be positive")
    r = r_e(model, eta, tol=spectral_tol)
    if r <= 1 + SNAP_THRESHOLD:
        return Equilibrium(g=np.zeros(model.n), residual=0.0, method="snapped")

    warning = None
    if abs(r - 1) < NEAR_CRITICAL:
        warning = "near-critical strategy (R_e = %.12g), solved by Newton iteration" % r
        logger.warning(warning)
        g, residual, iterations, converged = _newton(model, eta, tol)
        if converged:
            logger.debug("Newton iteration converged after %d iterations (residual %.3g)", iterations, residual)
            return Equilibrium(g=g, residual=residual, iterations=iterations, method="newton", warning=warning)
        warning = "near-critical strategy (R_e = %.12g), tolerance relaxed to %.1g" % (r, NEAR_CRITICAL_TOL)
        logger.warning("Newton iteration failed, %s", warning)
        tol = max(tol, NEAR_CRITICAL_TOL)
        max_iter *= NEAR_CRITICAL_ITER_FACTOR

    g, residual, iterations, converged = _fixed_point(model, eta, tol, max_iter)
    if converged:
        logger.debug("Fixed point reached after %d iterations (residual %.3g)", iterations, residual)
        return Equilibrium(g=g, residual=residual, iterations=iterations, warning=warning)

    # Iterates from 1 stay above the maximal equilibrium, so the ODE can resume from the last one.
    logger.warning("Fixed-point iteration cap of %d reached, falling back on ODE integration", max_iter)
    g, residual = _ode_fallback(model, eta, g, tol)
    return Equilibrium(g=g, residual=residual, iterations=iterations, method="ode", warning=warning)


def infected_fraction(model, eta, tol=EQUILIBRIUM_TOL):
    """
    Effective fraction of infected individuals at equilibrium: sum_i g[i] * eta[i] * weights[i].
    """
    eta = make_strategy(eta, model.n)
    g = maximal_equilibrium(model, eta, tol=tol).g
    return float(np.sum(g * eta * model.weights))

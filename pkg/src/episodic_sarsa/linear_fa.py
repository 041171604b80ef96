"""Linear action-value approximation over state-action pairs.

``q(s, a; theta) = phi(s, a) . theta``.  For a fixed policy the TD system is
``A theta + b = 0`` with ``A = Phi^T D (P - I) Phi`` and ``b = Phi^T D r``; its
solution is the fixed point of the eta-weighted projected Bellman operator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg

from .chain import ChainAnalysis, analyze
from .mdp import MdpSpec, PolicyTable, expected_reward

if TYPE_CHECKING:
    from .policies import PolicyFamily

log = logging.getLogger(__name__)

INDEPENDENCE_TOL = 1e-10
IDENTITY_TOL = 1e-10
FIXED_POINT_TOL = 1e-9


class FeatureError(ValueError):
    pass


class NotNegativeDefiniteError(ArithmeticError):
    pass


class NoConvergenceError(ArithmeticError):
    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Feature matrix Phi, one row per state-action pair."""

    phi: np.ndarray

    def __post_init__(self) -> None:
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 2:
            raise FeatureError("feature matrix must be two-dimensional")
        if not np.all(np.isfinite(phi)):
            raise FeatureError("feature matrix has non-finite entries")
        if phi.shape[1] > phi.shape[0]:
            raise FeatureError(f"{phi.shape[1]} features cannot be independent over {phi.shape[0]} pairs")
        smallest = float(np.linalg.svd(phi, compute_uv=False).min())
        if smallest <= INDEPENDENCE_TOL:
            raise FeatureError(f"feature columns are linearly dependent (smallest singular value {smallest:.3e})")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @property
    def phi_max(self) -> float:
        """Largest absolute row sum."""
        return float(np.abs(self.phi).sum(axis=1).max())

    @property
    def n_features(self) -> int:
        return self.phi.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.phi.shape[0]

    @classmethod
    def tabular(cls, spec: MdpSpec, scale: float = 1.0) -> FeatureMatrix:
        return cls(scale * np.eye(spec.n_pairs))


@dataclass(frozen=True, eq=False)
class TdSystem:
    a_pi: np.ndarray
    b_pi: np.ndarray
    theta_pi: np.ndarray

    @property
    def residual(self) -> float:
        return float(np.linalg.norm(self.a_pi @ self.theta_pi + self.b_pi))


def _check_dims(phi: FeatureMatrix, spec: MdpSpec) -> None:
    if phi.n_pairs != spec.n_pairs:
        raise FeatureError(f"feature matrix has {phi.n_pairs} rows, MDP has {spec.n_pairs} pairs")


def td_matrices(spec: MdpSpec, phi: FeatureMatrix, ca: ChainAnalysis) -> tuple[np.ndarray, np.ndarray]:
    """(A_pi, b_pi) without solving or checking."""
    _check_dims(phi, spec)
    weighted = phi.phi.T * ca.eta_pi
    a = weighted @ (ca.p_pi @ phi.phi - phi.phi)
    b = weighted @ expected_reward(spec)
    return a, b


def assemble(spec: MdpSpec, pi: PolicyTable | np.ndarray, phi: FeatureMatrix,
             ca: ChainAnalysis | None = None) -> TdSystem:
    """Build the TD system for ``pi`` and solve for its fixed point."""
    if ca is None:
        ca = analyze(spec, pi)
    a, b = td_matrices(spec, phi, ca)
    top = float(np.linalg.eigvalsh(0.5 * (a + a.T)).max())
    if top >= 0.0:
        raise NotNegativeDefiniteError(f"A not negative definite: largest symmetric eigenvalue {top:.3e}")
    theta = np.linalg.solve(a, -b)
    for arr in (a, b, theta):
        arr.setflags(write=False)
    return TdSystem(a, b, theta)


def exact_q(spec: MdpSpec, pi: PolicyTable | np.ndarray, ca: ChainAnalysis | None = None) -> np.ndarray:
    """True action values q_pi = N r."""
    if ca is None:
        ca = analyze(spec, pi)
    return ca.fundamental @ expected_reward(spec)


def bellman_op(q: np.ndarray, spec: MdpSpec, ca: ChainAnalysis) -> np.ndarray:
    """T_pi q = r + P_pi q."""
    q = np.asarray(q, dtype=float)
    if q.shape != (spec.n_pairs,):
        raise ValueError(f"q has shape {q.shape}, expected ({spec.n_pairs},)")
    return expected_reward(spec) + ca.p_pi @ q


def project(q: np.ndarray, phi: FeatureMatrix, ca: ChainAnalysis) -> np.ndarray:
    """eta-weighted least-squares projection of ``q`` onto span(Phi)."""
    q = np.asarray(q, dtype=float)
    if q.shape != (phi.n_pairs,):
        raise ValueError(f"q has shape {q.shape}, expected ({phi.n_pairs},)")
    weighted = phi.phi.T * ca.eta_pi
    gram = weighted @ phi.phi
    try:
        coef = scipy.linalg.solve(gram, weighted @ q, assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("weighted Gram matrix is singular") from exc
    return phi.phi @ coef


def s_vec(theta: np.ndarray, spec: MdpSpec, phi: FeatureMatrix, ca: ChainAnalysis) -> np.ndarray:
    """Phi^T D (T Phi theta - Phi theta), the expected TD direction at ``theta``."""
    q = phi.phi @ np.asarray(theta, dtype=float)
    return (phi.phi.T * ca.eta_pi) @ (bellman_op(q, spec, ca) - q)


def f_alpha(theta: np.ndarray, alpha: float, spec: MdpSpec, phi: FeatureMatrix, ca: ChainAnalysis) -> np.ndarray:
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    theta = np.asarray(theta, dtype=float)
    return theta + alpha * s_vec(theta, spec, phi, ca)


def quasi_contraction_constants(spec: MdpSpec, phi: FeatureMatrix, policies: list[PolicyTable],
                                rng: np.random.Generator, probes: int = 20) -> tuple[float, float]:
    """Sampled (c1, c2) with (theta - theta_pi).s <= -c1 |.|^2 and |s|^2 <= c2 |.|^2.

    c1 is the smallest observed descent rate and c2 the largest observed
    squared growth over random directions; ``2 c1 / c2`` is then a step size
    for which F^alpha contracts towards theta_pi on the sampled policies.
    """
    c1, c2 = np.inf, 0.0
    for pi in policies:
        ca = analyze(spec, pi)
        a, _ = td_matrices(spec, phi, ca)
        for _ in range(probes):
            v = rng.standard_normal(phi.n_features)
            v /= np.linalg.norm(v)
            # s(theta_pi + v) = A v since s is affine with root theta_pi
            sv = a @ v
            c1 = min(c1, float(-(v @ sv)))
            c2 = max(c2, float(sv @ sv))
    return c1, c2


@dataclass
class FixedPointResult:
    theta: np.ndarray
    residual: float
    iterations: int
    alpha: float
    residuals: list[float] = field(default_factory=list)
    method: str = "f_alpha"


def coupled_residual(theta: np.ndarray, spec: MdpSpec, phi: FeatureMatrix, family: PolicyFamily) -> float:
    pi = family.evaluate(theta, phi)
    a, b = td_matrices(spec, phi, analyze(spec, pi))
    return float(np.linalg.norm(a @ theta + b))


def solve_coupled_fixed_point(
    family: PolicyFamily,
    spec: MdpSpec,
    phi: FeatureMatrix,
    theta0: np.ndarray | None = None,
    alpha0: float | None = None,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = 1_000_000,
    seed: int = 0,
    stall_window: int = 5000,
) -> FixedPointResult:
    """Find theta with A_{pi_theta} theta + b_{pi_theta} = 0.

    Iterates theta <- F^alpha_{pi_theta}(theta) from ``theta0`` (default: the
    TD fixed point of the uniform policy).  The step starts at the sampled
    ``2 c1 / c2`` estimate, halves whenever the residual grows and doubles
    back (never above the start) after each accepted step.

    With a steep policy map the residual norm is not monotone along the path
    to the root and the iteration can stall in a local minimum of it.  When
    the best residual has not dropped by 1% over ``stall_window`` iterations,
    a hybrid Powell root finder takes over from the best iterate and from the
    default start; ``method`` on the result records which solver finished.
    """
    from scipy.optimize import root

    from .policies import sample_delta_eps

    rng = np.random.default_rng(seed)
    uniform = PolicyTable.uniform(spec.n_states, spec.n_actions)
    start = assemble(spec, uniform, phi).theta_pi
    theta = start.copy() if theta0 is None else np.array(theta0, dtype=float)
    if alpha0 is None:
        eps = min(family.epsilon, 1.0 / spec.n_actions)
        policies = [uniform] + [sample_delta_eps(spec, eps, int(rng.integers(2**63))) for _ in range(8)]
        c1, c2 = quasi_contraction_constants(spec, phi, policies, rng)
        alpha0 = 2.0 * c1 / c2 if c2 > 0 else 1.0
    alpha = alpha0

    def direction(th: np.ndarray) -> np.ndarray:
        ca = analyze(spec, family.evaluate(th, phi))
        a, b = td_matrices(spec, phi, ca)
        return a @ th + b

    step = direction(theta)
    res = float(np.linalg.norm(step))
    history = [res]
    best_res, best_at = res, 0
    it = 0
    while it < max_iter and res >= tol:
        it += 1
        candidate = theta + alpha * step
        cand_step = direction(candidate)
        cand_res = float(np.linalg.norm(cand_step))
        if not np.isfinite(cand_res) or cand_res > res:
            alpha *= 0.5
        else:
            theta, step, res = candidate, cand_step, cand_res
            alpha = min(2.0 * alpha, alpha0)
            history.append(res)
        if res < 0.99 * best_res:
            best_res, best_at = res, it
        elif it - best_at >= stall_window or alpha < 1e-300:
            break
    if res < tol:
        return FixedPointResult(theta, res, it, alpha, history)

    log.info("F^alpha iteration stalled at residual %.3e after %d iterations; switching to root finder", res, it)
    for x0 in (theta, start):
        sol = root(direction, x0, method="hybr", options={"xtol": 1e-14})
        sol_res = float(np.linalg.norm(direction(sol.x)))
        history.append(sol_res)
        if sol_res < tol:
            return FixedPointResult(np.asarray(sol.x, dtype=float), sol_res, it + int(sol.nfev), alpha, history,
                                    "root")
    raise NoConvergenceError(
        f"coupled fixed point not reached: residual {min(history):.3e} after {it} iterations", history
    )

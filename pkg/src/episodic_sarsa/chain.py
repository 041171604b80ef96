"""Absorbing-chain quantities over state-action pairs, and the norm toolkit.

For a policy pi the transient pairs form an absorbing chain with substochastic
matrix ``P[(s,a), (s',a')] = p(s'|s,a) pi(a'|s')``.  Everything else (visit
counts, absorption-time moments, contraction coefficients) is derived from
the fundamental matrix ``N = (I - P)^-1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg

from .mdp import MdpSpec, PolicyTable

PROPER_GUARD = 1e-9
RESIDUAL_TOL = 1e-12
ROW_SUM_TOL = 1e-12


class NotProperError(ArithmeticError):
    """The policy-induced chain does not absorb with probability one."""


class AssumptionError(ValueError):
    """A structural assumption needed by a computation does not hold."""


@dataclass(frozen=True, eq=False)
class ChainAnalysis:
    p_pi: np.ndarray
    lambda_pi: np.ndarray
    fundamental: np.ndarray
    eta_pi: np.ndarray
    t_vec: np.ndarray
    var_vec: np.ndarray
    spectral_radius: float

    @property
    def d_pi(self) -> np.ndarray:
        return np.diag(self.eta_pi)

    @property
    def n_pairs(self) -> int:
        return self.eta_pi.shape[0]

    @property
    def expected_length(self) -> float:
        """E[T] = lambda_pi . t = sum of expected visits."""
        return float(self.lambda_pi @ self.t_vec)

    @property
    def length_variance(self) -> float:
        """Var[T] by the law of total variance over the starting pair."""
        second = absorption_second_moment(self)
        return second - self.expected_length ** 2


def pair_transition(spec: MdpSpec, pi: PolicyTable | np.ndarray) -> np.ndarray:
    probs = pi.probs if isinstance(pi, PolicyTable) else np.asarray(pi)
    block = spec.transient_block()
    n = spec.n_pairs
    return (block[:, :, :, None] * probs[None, None, :, :]).reshape(n, n)


def pair_initial(spec: MdpSpec, pi: PolicyTable | np.ndarray) -> np.ndarray:
    probs = pi.probs if isinstance(pi, PolicyTable) else np.asarray(pi)
    return (spec.initial_dist[:, None] * probs).ravel()


def spectral_radius(m: np.ndarray) -> float:
    if m.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def analyze(spec: MdpSpec, pi: PolicyTable | np.ndarray) -> ChainAnalysis:
    """Solve the absorbing-chain systems induced by ``pi`` on ``spec``.

    Raises :class:`NotProperError` when the spectral radius of the pair chain is
    within ``PROPER_GUARD`` of one.
    """
    p = pair_transition(spec, pi)
    lam = pair_initial(spec, pi)
    rho = spectral_radius(p)
    if rho >= 1.0 - PROPER_GUARD:
        raise NotProperError(f"policy is not proper on {spec.name}: spectral radius {rho:.12g}")
    n = p.shape[0]
    eye = np.eye(n)
    lu = scipy.linalg.lu_factor(eye - p)
    ones = np.ones(n)
    t = scipy.linalg.lu_solve(lu, ones)
    eta = scipy.linalg.lu_solve(lu, lam, trans=1)
    fundamental = scipy.linalg.lu_solve(lu, eye)
    _check_residual(eye - p, t, ones, "t")
    _check_residual((eye - p).T, eta, lam, "eta")
    var = (2.0 * fundamental - eye) @ t - t * t
    for arr in (p, lam, fundamental, eta, t, var):
        arr.setflags(write=False)
    return ChainAnalysis(p, lam, fundamental, eta, t, var, rho)


def _check_residual(m: np.ndarray, x: np.ndarray, b: np.ndarray, what: str) -> None:
    scale = max(1.0, float(np.max(np.abs(x))) * float(np.max(np.abs(m))))
    res = float(np.max(np.abs(m @ x - b))) if b.size else 0.0
    if res > RESIDUAL_TOL * scale * max(1, b.size):
        raise ArithmeticError(f"linear solve for {what} left residual {res:.3e}")


def absorption_second_moment(ca: ChainAnalysis) -> float:
    """E[T^2] = lambda_pi^T (2N - I) t."""
    return float(ca.lambda_pi @ (2.0 * (ca.fundamental @ ca.t_vec) - ca.t_vec))


def contraction_coefficient(
    spec: MdpSpec, ca: ChainAnalysis, which: Literal["case_i", "case_ii"]
) -> float:
    """Contraction coefficient of the two proof branches.

    ``case_i`` needs every initial pair probability positive and returns
    ``1 - min lambda_pi / eta_pi``; ``case_ii`` needs every row of ``P_pi`` to
    sum below one and returns the largest row sum.  Both branches bound the
    *squared* weighted norm, ``||P q||_eta^2 <= beta ||q||_eta^2``; the
    ``case_ii`` row sum also bounds the norm itself.
    """
    if which == "case_i":
        if np.any(ca.lambda_pi <= 0.0):
            raise AssumptionError("case_i contraction needs full initial support: "
                                  "initial pair distribution has a zero entry")
        return float(1.0 - np.min(ca.lambda_pi / ca.eta_pi))
    if which == "case_ii":
        row_sums = ca.p_pi.sum(axis=1)
        beta = float(np.max(row_sums)) if row_sums.size else 0.0
        if beta >= 1.0 - ROW_SUM_TOL:
            raise AssumptionError("case_ii contraction needs leaking rows: some pair-chain row sums to 1")
        return beta
    raise ValueError(f"unknown case {which!r}")


def applicable_cases(spec: MdpSpec, ca: ChainAnalysis) -> list[str]:
    """Which branches of the contraction assumption hold for this chain."""
    cases = []
    for which in ("case_i", "case_ii"):
        try:
            contraction_coefficient(spec, ca, which)
        except AssumptionError:
            continue
        cases.append(which)
    return cases


def weighted_norm(q: np.ndarray, ca: ChainAnalysis) -> float:
    """sqrt(q^T D_pi q)."""
    q = np.asarray(q, dtype=float)
    if q.shape != ca.eta_pi.shape:
        raise ValueError(f"vector of shape {q.shape} does not match {ca.eta_pi.shape[0]} pairs")
    return float(np.sqrt(q @ (ca.eta_pi * q)))


# ---------------------------------------------------------------------------
# norms


def spectral_norm(a: np.ndarray, rtol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Largest singular value by power iteration on the Gram matrix."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0 or not np.any(a):
        return 0.0
    gram = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    v = np.abs(gram).sum(axis=0) + 1.0
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = gram @ v
        mu = float(v @ w)
        # residual test: an eigenvalue of the Gram matrix lies within |r| of mu
        if float(np.linalg.norm(w - mu * v)) <= rtol * mu:
            return float(np.sqrt(mu))
        v = w / np.linalg.norm(w)
    # tied or nearly tied top singular values; iterate does not settle
    return float(np.linalg.norm(a, 2))


def norm(x: np.ndarray, kind: Literal["euclidean", "spectral", "one", "infinity", "max"] = "euclidean") -> float:
    """Vector and matrix norms.

    For vectors ``euclidean``/``one``/``infinity``/``max`` are the usual p-norms
    (``max`` equals ``infinity``).  For matrices ``euclidean`` and ``spectral``
    are the largest singular value, ``infinity`` the largest absolute row sum,
    ``one`` the largest absolute column sum and ``max`` the largest entry.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        x = x.ravel()
        if kind in ("euclidean", "spectral"):
            return float(np.sqrt(x @ x))
        if kind == "one":
            return float(np.abs(x).sum())
        if kind in ("infinity", "max"):
            return float(np.abs(x).max()) if x.size else 0.0
    elif x.ndim == 2:
        if kind in ("euclidean", "spectral"):
            return spectral_norm(x)
        if kind == "one":
            return float(np.abs(x).sum(axis=0).max()) if x.size else 0.0
        if kind == "infinity":
            return float(np.abs(x).sum(axis=1).max()) if x.size else 0.0
        if kind == "max":
            return float(np.abs(x).max()) if x.size else 0.0
    raise ValueError(f"unsupported norm {kind!r} for array of dimension {x.ndim}")

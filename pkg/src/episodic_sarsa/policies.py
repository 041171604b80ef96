"""Behaviour-policy families pi_theta and samplers of eps-soft policies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np

from .mdp import MdpError, MdpSpec, PolicyTable

if TYPE_CHECKING:
    from .linear_fa import FeatureMatrix

Kind = Literal["constant", "eps_soft_softmax", "eps_greedy"]


@dataclass(frozen=True, eq=False)
class PolicyFamily:
    """A parameterized behaviour policy.

    ``eps_soft_softmax`` mixes a softmax over ``phi(s, .) . theta / temperature``
    with the uniform floor ``epsilon``; ``constant`` ignores theta.
    ``eps_greedy`` is discontinuous in theta and only exists for contrast runs.
    """

    kind: Kind
    epsilon: float = 0.0
    temperature: float = 1.0
    base_policy: PolicyTable | None = None
    n_actions: int | None = None

    def __post_init__(self) -> None:
        if self.kind == "constant":
            if self.base_policy is None:
                raise MdpError("constant family needs a base policy")
            object.__setattr__(self, "n_actions", self.base_policy.probs.shape[1])
            object.__setattr__(self, "epsilon", float(self.base_policy.probs.min()))
            return
        if self.kind not in ("eps_soft_softmax", "eps_greedy"):
            raise MdpError(f"unknown policy family {self.kind!r}")
        if self.n_actions is None:
            raise MdpError(f"{self.kind} family needs n_actions")
        if self.epsilon <= 0.0 and self.kind == "eps_soft_softmax":
            raise MdpError("epsilon must be positive")
        if self.epsilon * self.n_actions > 1.0 + 1e-12:
            raise MdpError(f"epsilon {self.epsilon} too large for {self.n_actions} actions")
        if self.temperature <= 0.0:
            raise MdpError("temperature must be positive")

    @classmethod
    def constant(cls, policy: PolicyTable) -> PolicyFamily:
        return cls("constant", base_policy=policy)

    @classmethod
    def softmax(cls, spec: MdpSpec, epsilon: float, temperature: float) -> PolicyFamily:
        return cls("eps_soft_softmax", epsilon=epsilon, temperature=temperature, n_actions=spec.n_actions)

    def evaluate(self, theta: np.ndarray, phi: FeatureMatrix) -> PolicyTable:
        return evaluate(self, theta, phi)


def _logits(theta: np.ndarray, phi: FeatureMatrix, n_actions: int) -> np.ndarray:
    q = phi.phi @ np.asarray(theta, dtype=float)
    return q.reshape(-1, n_actions)


def evaluate(family: PolicyFamily, theta: np.ndarray, phi: FeatureMatrix) -> PolicyTable:
    if family.kind == "constant":
        return family.base_policy
    n_a = family.n_actions
    eps = family.epsilon
    q = _logits(theta, phi, n_a)
    if family.kind == "eps_greedy":
        greedy = np.zeros_like(q)
        greedy[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
        return PolicyTable(eps + (1.0 - n_a * eps) * greedy, eps)
    z = q / family.temperature
    z = z - z.max(axis=1, keepdims=True)
    w = np.exp(z)
    probs = eps + (1.0 - n_a * eps) * (w / w.sum(axis=1, keepdims=True))
    # absorb the rounding drift of the row sums into the largest entry
    drift = 1.0 - probs.sum(axis=1)
    probs[np.arange(probs.shape[0]), np.argmax(probs, axis=1)] += drift
    return PolicyTable(probs, eps)


def estimate_lipschitz(family: PolicyFamily, phi: FeatureMatrix, sample_count: int = 200,
                       radius: float = 10.0, seed: int = 0) -> float:
    """Largest sampled ||pi_t1 - pi_t2|| / ||t1 - t2|| over pairs in a ball.

    A lower bound on the true Lipschitz constant.  Pairs are drawn as a point
    uniform in the ball plus a short random displacement, so the quotients
    probe local slopes as well as chords.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be at least 2")
    if family.kind == "constant":
        return 0.0
    rng = np.random.default_rng(seed)
    d = phi.n_features
    best = 0.0
    for k in range(sample_count):
        t1 = _uniform_ball(rng, d, radius)
        step = radius * (10.0 ** rng.uniform(-4, 0))
        t2 = t1 + step * _unit(rng, d)
        diff = np.linalg.norm(evaluate(family, t1, phi).vector - evaluate(family, t2, phi).vector)
        best = max(best, float(diff / np.linalg.norm(t1 - t2)))
    return best


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _uniform_ball(rng: np.random.Generator, d: int, radius: float) -> np.ndarray:
    return _unit(rng, d) * radius * rng.uniform() ** (1.0 / d)


def sample_delta_eps(spec: MdpSpec, epsilon: float, rng_seed: int | np.random.Generator) -> PolicyTable:
    """Draw a policy from the eps-soft set: each row is eps + (1 - |A| eps) Dirichlet(1)."""
    n_a = spec.n_actions
    if epsilon * n_a > 1.0 + 1e-12:
        raise MdpError(f"epsilon {epsilon} too large for {n_a} actions")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    mass = max(0.0, 1.0 - n_a * epsilon)
    probs = epsilon + mass * rng.dirichlet(np.ones(n_a), size=spec.n_states)
    if mass == 0.0:
        probs = np.full((spec.n_states, n_a), 1.0 / n_a)
    drift = 1.0 - probs.sum(axis=1)
    probs[np.arange(spec.n_states), np.argmax(probs, axis=1)] += drift
    return PolicyTable(probs, min(epsilon, 1.0 / n_a))

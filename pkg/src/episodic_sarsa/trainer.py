"""Trajectory-batched SARSA with linear function approximation.

The weight vector is updated once per episode with the summed TD terms of
the whole trajectory, and the behaviour policy is refreshed from the new
weights before the next episode starts.

Randomness comes from counter-based streams: episode ``e`` of a run with
master seed ``k`` draws its uniforms from Philox keyed by ``(k, e)``, so any
episode can be replayed from ``(theta_e, k, e)`` alone.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

from ._kernels import get_backend
from .linear_fa import FeatureMatrix
from .mdp import MdpSpec, PolicyTable
from .policies import PolicyFamily

log = logging.getLogger(__name__)

EPISODE_CAP = 1_000_000
MC_STREAM_BASE = 1 << 63
HISTORY_COLUMNS = ("episode", "theta", "distance", "length", "return", "alpha")
_KIND_CODES = {"constant": 0, "eps_soft_softmax": 1, "eps_greedy": 2}


class EpisodeCapExceeded(RuntimeError):
    pass


class TrainingDiverged(ArithmeticError):
    def __init__(self, message: str, recent: list[dict]):
        super().__init__(message)
        self.recent = recent


# ---------------------------------------------------------------------------
# random streams


class EpisodeStreams:
    """Uniform streams keyed by (master seed, stream index)."""

    def __init__(self, seed: int):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = int(seed)
        self._bitgen = np.random.Philox(key=np.array([self.seed, 0], dtype=np.uint64))
        self._gen = np.random.Generator(self._bitgen)
        self._key = np.array([self.seed, 0], dtype=np.uint64)

    def start(self, index: int, n: int) -> np.ndarray:
        """Rewind to the beginning of stream ``index`` and draw ``n`` uniforms."""
        self._key[1] = index
        self._bitgen.state = {
            "bit_generator": "Philox",
            "state": {"counter": np.zeros(4, dtype=np.uint64), "key": self._key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self._gen.random(n)

    def more(self, n: int) -> np.ndarray:
        """Continue the current stream."""
        return self._gen.random(n)

    def generator(self, index: int) -> np.random.Generator:
        """An independent Generator positioned at the start of stream ``index``."""
        bg = np.random.Philox(key=np.array([self.seed, index], dtype=np.uint64))
        return np.random.Generator(bg)


# ---------------------------------------------------------------------------
# compiled model arrays


@dataclass(frozen=True, eq=False)
class KernelModel:
    """Contiguous arrays consumed by the episode kernels."""

    trans: np.ndarray
    reward: np.ndarray
    trans_last: np.ndarray
    init: np.ndarray
    init_last: int
    phi: np.ndarray
    n_states: int
    n_actions: int

    @classmethod
    def build(cls, spec: MdpSpec, phi: FeatureMatrix) -> KernelModel:
        trans = np.ascontiguousarray(spec.completed_transition())
        reward = np.ascontiguousarray(spec.reward, dtype=float)
        positive = trans > 0.0
        last = np.where(positive.any(axis=2), trans.shape[2] - 1 - np.argmax(positive[:, :, ::-1], axis=2), 0)
        init = np.ascontiguousarray(spec.initial_dist, dtype=float)
        init_last = int(np.flatnonzero(init > 0.0)[-1])
        return cls(trans, reward, np.ascontiguousarray(last, dtype=np.int64), init, init_last,
                   np.ascontiguousarray(phi.phi, dtype=float), spec.n_states, spec.n_actions)


def _family_args(family: PolicyFamily, model: KernelModel) -> tuple[int, float, float, np.ndarray]:
    base = family.base_policy.probs if family.kind == "constant" else np.zeros((model.n_states, model.n_actions))
    eps = 0.0 if family.kind == "constant" else family.epsilon
    return _KIND_CODES[family.kind], float(eps), float(family.temperature), np.ascontiguousarray(base)


# ---------------------------------------------------------------------------
# trajectories and the update direction


@dataclass(frozen=True)
class Trajectory:
    """States S_0..S_T (indices into transient+terminal), actions, rewards."""

    states: tuple[int, ...]
    actions: tuple[int, ...]
    rewards: tuple[float, ...]
    n_states: int
    n_actions: int

    def __post_init__(self) -> None:
        if len(self.actions) != len(self.rewards) or len(self.states) != len(self.actions) + 1:
            raise ValueError("inconsistent trajectory lengths")
        if not self.actions:
            raise ValueError("a trajectory has at least one step")
        if self.states[-1] < self.n_states or any(s >= self.n_states for s in self.states[:-1]):
            raise ValueError("exactly the final state must be terminal")

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def pairs(self) -> list[int]:
        return [s * self.n_actions + a for s, a in zip(self.states, self.actions)]

    @property
    def total_reward(self) -> float:
        total = 0.0
        for r in self.rewards:
            total = total + r
        return total


def _sample(p: np.ndarray, u: float) -> int:
    acc = 0.0
    last = 0
    for j, pj in enumerate(p.tolist()):
        acc = acc + pj
        if pj > 0.0:
            last = j
        if u < acc:
            return j
    return last


def simulate_episode(spec: MdpSpec, pi: PolicyTable, rng: np.random.Generator, cap: int = EPISODE_CAP) -> Trajectory:
    """Sample one episode; uniforms are consumed in the same order as the kernels."""
    trans = spec.completed_transition()
    s = _sample(spec.initial_dist, rng.random())
    states, actions, rewards = [s], [], []
    while s < spec.n_states:
        if len(actions) >= cap:
            raise EpisodeCapExceeded(f"episode exceeded {cap} steps")
        a = _sample(pi.probs[s], rng.random())
        j = _sample(trans[s, a], rng.random())
        actions.append(a)
        rewards.append(float(spec.reward[s, a, j]))
        states.append(j)
        s = j
    return Trajectory(tuple(states), tuple(actions), tuple(rewards), spec.n_states, spec.n_actions)


def _check_features(traj: Trajectory, phi: FeatureMatrix) -> None:
    if phi.n_pairs != traj.n_states * traj.n_actions:
        raise ValueError(f"feature matrix has {phi.n_pairs} rows, trajectory expects "
                         f"{traj.n_states * traj.n_actions} pairs")


def h_of(theta: np.ndarray, traj: Trajectory, phi: FeatureMatrix, exact: bool = False):
    """Summed TD direction of one trajectory.

    sum_u phi_u (r_u + phi_{u+1}.theta - phi_u.theta) with phi of the terminal
    state taken as zero.  ``exact=True`` evaluates in rational arithmetic and
    returns a list of :class:`~fractions.Fraction`.
    """
    _check_features(traj, phi)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (phi.n_features,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({phi.n_features},)")
    pairs = traj.pairs
    if exact:
        rows = [[Fraction(x) for x in phi.phi[p]] for p in pairs]
        th = [Fraction(x) for x in theta]
        qs = [sum((f * t for f, t in zip(row, th)), Fraction(0)) for row in rows] + [Fraction(0)]
        h = [Fraction(0)] * phi.n_features
        for u, row in enumerate(rows):
            delta = Fraction(traj.rewards[u]) + qs[u + 1] - qs[u]
            h = [hk + fk * delta for hk, fk in zip(h, row)]
        return h
    rows = phi.phi[pairs]
    q = np.append(rows @ theta, 0.0)
    delta = np.asarray(traj.rewards) + q[1:] - q[:-1]
    return delta @ rows


def h_of_counts(theta: np.ndarray, traj: Trajectory, phi: FeatureMatrix, exact: bool = False):
    """Same quantity grouped by transition counts (s,a) -> (s',a').

    Terminal successors carry no action; their pair key is ``None``.
    """
    _check_features(traj, phi)
    counts: dict[tuple[int, int | None, int], int] = {}
    reward_of: dict[tuple[int, int | None, int], float] = {}
    pairs = traj.pairs
    for u in range(traj.length):
        nxt = pairs[u + 1] if u + 1 < traj.length else None
        key = (pairs[u], nxt, traj.states[u + 1])
        counts[key] = counts.get(key, 0) + 1
        reward_of[key] = traj.rewards[u]
    if exact:
        th = [Fraction(x) for x in np.asarray(theta, dtype=float)]

        def q(p: int | None) -> Fraction:
            if p is None:
                return Fraction(0)
            return sum((Fraction(f) * t for f, t in zip(phi.phi[p], th)), Fraction(0))

        h = [Fraction(0)] * phi.n_features
        for (p, nxt, _), n in counts.items():
            delta = Fraction(reward_of[(p, nxt, _)]) + q(nxt) - q(p)
            h = [hk + n * Fraction(f) * delta for hk, f in zip(h, phi.phi[p])]
        return h
    theta = np.asarray(theta, dtype=float)
    qv = phi.phi @ theta
    h = np.zeros(phi.n_features)
    for (p, nxt, s_next), n in counts.items():
        delta = reward_of[(p, nxt, s_next)] + (qv[nxt] if nxt is not None else 0.0) - qv[p]
        h += n * delta * phi.phi[p]
    return h


# ---------------------------------------------------------------------------
# Monte-Carlo sampling at a fixed policy


@dataclass
class EpisodeSample:
    h: np.ndarray
    lengths: np.ndarray
    returns: np.ndarray


def sample_episodes(spec: MdpSpec, phi: FeatureMatrix, pi: PolicyTable, theta: np.ndarray, n_episodes: int,
                    seed: int, stream: int = 0, backend: str | None = None,
                    model: KernelModel | None = None, cap: int = EPISODE_CAP) -> EpisodeSample:
    """Simulate ``n_episodes`` under a fixed policy; record H(theta, X), T and the return."""
    kern = get_backend(backend)
    model = model or KernelModel.build(spec, phi)
    theta = np.ascontiguousarray(theta, dtype=float)
    pi_arr = np.ascontiguousarray(pi.probs)
    h = np.zeros((n_episodes, phi.n_features))
    lengths = np.zeros(n_episodes, dtype=np.int64)
    returns = np.zeros(n_episodes)
    streams = EpisodeStreams(seed)
    chunk = int(min(1 << 22, max(1024, 4 * n_episodes)))
    buf = streams.start(MC_STREAM_BASE + stream, chunk)
    pos = 0
    done = 0
    while done < n_episodes:
        done, pos = kern.run_batch(model.trans, model.reward, model.trans_last, model.init, model.init_last,
                                   model.phi, theta, pi_arr, n_episodes, buf, pos, cap, h, lengths,
                                   returns, done)
        if done < 0:
            raise EpisodeCapExceeded(f"episode {-1 - done} exceeded {cap} steps")
        if done < n_episodes:
            buf = np.concatenate([buf[pos:], streams.more(max(chunk, len(buf) - pos))])
            pos = 0
    return EpisodeSample(h, lengths, returns)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class StepSchedule:
    """Harmonic step sizes alpha_t = alpha0 / (1 + t / t0)."""

    alpha0: float = 1.0
    t0: float = 1000.0
    kind: str = "harmonic"

    def __post_init__(self) -> None:
        if self.kind != "harmonic":
            raise ValueError(f"unknown schedule {self.kind!r}")
        if self.alpha0 <= 0 or self.t0 <= 0:
            raise ValueError("alpha0 and t0 must be positive")

    def __call__(self, t: int) -> float:
        return self.alpha0 / (1.0 + t / self.t0)


@dataclass
class TrainState:
    """Everything needed to resume a run: theta, the next episode index and the seed."""

    theta: np.ndarray
    episode: int
    seed: int
    recent: deque = field(default_factory=lambda: deque(maxlen=100))

    def to_dict(self) -> dict:
        return {"theta": [float(x) for x in self.theta], "episode": self.episode, "seed": self.seed}

    @classmethod
    def from_dict(cls, doc: dict) -> TrainState:
        return cls(np.array(doc["theta"], dtype=float), int(doc["episode"]), int(doc["seed"]))


@dataclass
class TrainResult:
    state: TrainState
    history: list[dict]

    @property
    def theta(self) -> np.ndarray:
        return self.state.theta


def train(spec: MdpSpec, phi: FeatureMatrix, family: PolicyFamily, schedule: StepSchedule, episodes: int,
          seed: int, *, theta0: np.ndarray | None = None, reference: np.ndarray | None = None,
          cadence: int = 1000, state: TrainState | None = None, backend: str | None = None,
          model: KernelModel | None = None) -> TrainResult:
    """Run ``episodes`` more episodes of trajectory-batched SARSA.

    Pass ``state`` to resume a previous run; the continuation is bit-identical
    to an uninterrupted run because episode streams depend only on
    ``(seed, episode index)``.
    """
    if episodes < 0:
        raise ValueError("episodes must be nonnegative")
    kern = get_backend(backend)
    model = model or KernelModel.build(spec, phi)
    if state is None:
        theta = np.zeros(phi.n_features) if theta0 is None else np.array(theta0, dtype=float)
        state = TrainState(theta, 0, seed)
    elif state.seed != seed:
        raise ValueError("resumed state belongs to a different seed")
    theta = np.array(state.theta, dtype=float)
    kind, eps, temperature, base = _family_args(family, model)
    pi = np.zeros((model.n_states, model.n_actions))
    pi_last = np.zeros(model.n_states, dtype=np.int64)
    h = np.zeros(phi.n_features)
    ref = None if reference is None else np.asarray(reference, dtype=float)
    streams = EpisodeStreams(seed)
    width = 64
    history: list[dict] = []
    stop = state.episode + episodes
    for t in range(state.episode, stop):
        buf = streams.start(t, width)
        while True:
            steps, ret = kern.run_episode(model.trans, model.reward, model.trans_last, model.init,
                                          model.init_last, model.phi, theta, kind, eps, temperature, base,
                                          pi, pi_last, buf, EPISODE_CAP, h)
            if steps >= 0:
                break
            if steps == -2:
                raise EpisodeCapExceeded(f"episode {t} exceeded {EPISODE_CAP} steps")
            buf = np.concatenate([buf, streams.more(len(buf))])
        alpha = schedule(t + 1)
        with np.errstate(over="ignore", invalid="ignore"):
            theta = theta + alpha * h
        state.recent.append({"episode": t, "alpha": alpha, "length": steps, "h": h.tolist()})
        if not np.all(np.isfinite(theta)):
            raise TrainingDiverged(f"non-finite weights after episode {t}", list(state.recent))
        if (t + 1) % cadence == 0 or t + 1 == stop:
            history.append({
                "episode": t + 1,
                "theta": theta.copy(),
                "distance": float(np.linalg.norm(theta - ref)) if ref is not None else float("nan"),
                "length": int(steps),
                "return": float(ret),
                "alpha": alpha,
            })
    state.theta = theta
    state.episode = stop
    return TrainResult(state, history)


def history_rows(history: Iterable[dict]) -> tuple[list[str], list[list]]:
    """Flatten training history into CSV header and rows."""
    history = list(history)
    d = len(history[0]["theta"]) if history else 0
    header = ["episode"] + [f"theta_{k}" for k in range(d)] + ["distance", "length", "return", "alpha"]
    rows = [[row["episode"], *[float(x) for x in row["theta"]], row["distance"], row["length"], row["return"],
             row["alpha"]] for row in history]
    return header, rows

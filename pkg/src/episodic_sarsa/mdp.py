"""Finite random-horizon MDPs, tabular policies and the discount-as-termination transform.

States are split into transient states (where actions are taken) and terminal
states.  Successor arrays are indexed over ``transient_states + terminal_states``
so column ``j < n_states`` is a transient successor and the remaining columns are
terminals.  State-action pairs are flattened row-major: ``pair = s * n_actions + a``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROB_TOL = 1e-12
GAMMA_SINK = "gamma-sink"

MDP_FILE_KEYS = frozenset(
    {"states", "terminals", "actions", "transitions", "rewards", "initial", "implicit_sink", "r_max"}
)


class MdpError(ValueError):
    """Raised when an MDP or policy is malformed."""


@dataclass(frozen=True)
class Violation:
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.message}"


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """A finite absorbing MDP.

    ``transition[s, a, j]`` is p(j | s, a) and ``reward[s, a, j]`` is r(s, a, j),
    with ``j`` ranging over transient states followed by terminal states.  A
    row summing to less than one is only legal when ``implicit_sink`` names the
    terminal receiving the missing mass (with reward 0).
    """

    transient_states: tuple[str, ...]
    terminal_states: tuple[str, ...]
    actions: tuple[str, ...]
    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    implicit_sink: str | None = None
    r_max: float | None = None
    name: str = field(default="mdp", compare=False)

    def __post_init__(self) -> None:
        for attr in ("transition", "reward", "initial_dist"):
            arr = np.array(getattr(self, attr), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        for attr in ("transient_states", "terminal_states", "actions"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))

    @property
    def n_states(self) -> int:
        return len(self.transient_states)

    @property
    def n_terminals(self) -> int:
        return len(self.terminal_states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    @property
    def all_states(self) -> tuple[str, ...]:
        return self.transient_states + self.terminal_states

    @property
    def reward_bound(self) -> float:
        """Declared r_max, or the largest absolute reward when none is declared."""
        if self.r_max is not None:
            return float(self.r_max)
        return float(np.max(np.abs(self.reward))) if self.reward.size else 0.0

    def pair_index(self, s: str, a: str) -> int:
        return self.transient_states.index(s) * self.n_actions + self.actions.index(a)

    def completed_transition(self) -> np.ndarray:
        """Transition array with any implicit termination mass moved onto the sink column."""
        p = np.array(self.transition, dtype=float)
        if self.implicit_sink is not None:
            j = self.n_states + self.terminal_states.index(self.implicit_sink)
            deficit = 1.0 - p.sum(axis=2)
            p[:, :, j] += np.where(deficit > 0.0, deficit, 0.0)
        return p

    def transient_block(self) -> np.ndarray:
        """p(s' | s, a) restricted to transient successors, shape (S, A, S)."""
        return np.asarray(self.transition[:, :, : self.n_states])


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """A stochastic policy pi(a | s) as an (S, A) matrix."""

    probs: np.ndarray
    epsilon_floor: float = 0.0

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2:
            raise MdpError("policy table must be two-dimensional")
        if np.any(~np.isfinite(probs)):
            raise MdpError("policy table contains non-finite entries")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > PROB_TOL):
            raise MdpError("policy rows must sum to 1")
        if np.any(probs < self.epsilon_floor - PROB_TOL):
            raise MdpError(f"policy entry below epsilon floor {self.epsilon_floor}")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def vector(self) -> np.ndarray:
        """Vectorized view of length |S||A| (row-major over states)."""
        return self.probs.ravel()

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> PolicyTable:
        return cls(np.full((n_states, n_actions), 1.0 / n_actions), 1.0 / n_actions)


def validate(spec: MdpSpec) -> list[Violation]:
    """Return every violated structural invariant of ``spec`` (empty when valid)."""
    out: list[Violation] = []
    ids = spec.transient_states + spec.terminal_states
    for kind, names in (("states", spec.transient_states), ("terminals", spec.terminal_states),
                        ("actions", spec.actions)):
        for name in names:
            if not isinstance(name, str) or not name:
                out.append(Violation(kind, f"malformed identifier {name!r}"))
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            out.append(Violation(kind, f"duplicate identifiers {dupes}"))
    overlap = sorted(set(spec.transient_states) & set(spec.terminal_states))
    if overlap:
        out.append(Violation("states", f"identifiers both transient and terminal: {overlap}"))
    if spec.n_terminals == 0:
        out.append(Violation("terminals", "at least one terminal state is required"))
    if spec.n_states == 0 or spec.n_actions == 0:
        out.append(Violation("states", "need at least one transient state and one action"))
        return out

    shape = (spec.n_states, spec.n_actions, len(ids))
    if spec.transition.shape != shape:
        out.append(Violation("transitions", f"shape {spec.transition.shape}, expected {shape}"))
        return out
    if spec.reward.shape != shape:
        out.append(Violation("rewards", f"shape {spec.reward.shape}, expected {shape}"))
        return out
    if spec.initial_dist.shape != (spec.n_states,):
        out.append(Violation("initial", f"shape {spec.initial_dist.shape}, expected ({spec.n_states},)"))
        return out
    if spec.implicit_sink is not None and spec.implicit_sink not in spec.terminal_states:
        out.append(Violation("implicit_sink", f"{spec.implicit_sink!r} is not a terminal state"))

    p = spec.transition
    if not np.all(np.isfinite(p)):
        out.append(Violation("transitions", "non-finite probability"))
    if not np.all(np.isfinite(spec.reward)):
        out.append(Violation("rewards", "non-finite reward"))
    for s, a, j in zip(*np.nonzero(p < 0.0)):
        out.append(Violation(f"p({ids[j]}|{ids[s]},{spec.actions[a]})", f"negative probability {p[s, a, j]!r}"))
    sums = p.sum(axis=2)
    for s in range(spec.n_states):
        for a in range(spec.n_actions):
            loc = f"p(.|{ids[s]},{spec.actions[a]})"
            if sums[s, a] > 1.0 + PROB_TOL:
                out.append(Violation(loc, f"row sum {sums[s, a]!r} > 1"))
            elif sums[s, a] < 1.0 - PROB_TOL and spec.implicit_sink is None:
                out.append(Violation(loc, f"row sum {sums[s, a]!r} < 1 without implicit_sink"))

    lam = spec.initial_dist
    if np.any(lam < 0.0) or not np.all(np.isfinite(lam)):
        out.append(Violation("initial", "negative or non-finite initial probability"))
    if abs(lam.sum() - 1.0) > PROB_TOL:
        out.append(Violation("initial", f"initial distribution sums to {lam.sum()!r}"))

    if spec.r_max is not None:
        worst = float(np.max(np.abs(spec.reward)))
        if worst > spec.r_max:
            out.append(Violation("rewards", f"|r| = {worst!r} exceeds declared r_max {spec.r_max!r}"))

    if not out:
        unreached = [spec.transient_states[s] for s in _unreachable(spec)]
        if unreached:
            out.append(Violation("states", f"unreachable from initial support: {unreached}"))
    return out


def _unreachable(spec: MdpSpec) -> list[int]:
    # Any eps-soft policy has full action support, so the support graph is the
    # uniform-policy graph.
    adj = spec.transient_block().sum(axis=1) > 0.0
    seen = set(np.flatnonzero(spec.initial_dist > 0.0).tolist())
    queue = deque(seen)
    while queue:
        s = queue.popleft()
        for nxt in np.flatnonzero(adj[s]).tolist():
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return [s for s in range(spec.n_states) if s not in seen]


def check(spec: MdpSpec) -> MdpSpec:
    """Raise :class:`MdpError` listing all violations, else return ``spec``."""
    report = validate(spec)
    if report:
        raise MdpError("; ".join(str(v) for v in report))
    return spec


def expected_reward(spec: MdpSpec) -> np.ndarray:
    """r(s, a) = sum_j p(j|s,a) r(s,a,j), flattened over state-action pairs."""
    return np.einsum("saj,saj->sa", spec.transition, spec.reward).ravel()


def discount_transform(spec: MdpSpec, gamma: float) -> MdpSpec:
    """Fold a discount factor into termination.

    Every transition probability is scaled by ``gamma`` and the leftover mass
    is routed to a new terminal ``gamma-sink`` with reward 0.
    """
    if not 0.0 < gamma < 1.0:
        raise MdpError(f"gamma must lie in (0, 1), got {gamma!r}")
    sink = GAMMA_SINK
    while sink in spec.all_states:
        sink += "'"
    p = spec.completed_transition() * gamma
    leftover = 1.0 - p.sum(axis=2, keepdims=True)
    trans = np.concatenate([p, leftover], axis=2)
    rew = np.concatenate([spec.reward, np.zeros_like(leftover)], axis=2)
    return MdpSpec(
        transient_states=spec.transient_states,
        terminal_states=spec.terminal_states + (sink,),
        actions=spec.actions,
        transition=trans,
        reward=rew,
        initial_dist=spec.initial_dist,
        implicit_sink=None,
        r_max=spec.r_max,
        name=f"{spec.name}-gamma{gamma:g}",
    )


# ---------------------------------------------------------------------------
# JSON file format


def from_dict(doc: dict, name: str = "mdp") -> MdpSpec:
    """Build an :class:`MdpSpec` from the JSON document layout.

    Unlisted transitions and rewards are zero; unknown keys are rejected.
    """
    unknown = set(doc) - MDP_FILE_KEYS
    if unknown:
        raise MdpError(f"unknown keys in MDP document: {sorted(unknown)}")
    missing = {"states", "terminals", "actions", "transitions", "initial"} - set(doc)
    if missing:
        raise MdpError(f"missing keys in MDP document: {sorted(missing)}")
    states = tuple(doc["states"])
    terminals = tuple(doc["terminals"])
    actions = tuple(doc["actions"])
    succ = {k: i for i, k in enumerate(states + terminals)}
    s_idx = {k: i for i, k in enumerate(states)}
    a_idx = {k: i for i, k in enumerate(actions)}
    shape = (len(states), len(actions), len(succ))
    trans = np.zeros(shape)
    rew = np.zeros(shape)

    def _locate(entry: dict, keys: set, what: str) -> tuple[int, int, int]:
        if set(entry) != keys:
            raise MdpError(f"{what} entry {entry!r} must have exactly the keys {sorted(keys)}")
        try:
            return s_idx[entry["s"]], a_idx[entry["a"]], succ[entry["s_next"]]
        except KeyError as exc:
            raise MdpError(f"{what} entry {entry!r} references unknown identifier {exc}") from None

    for entry in doc["transitions"]:
        trans[_locate(entry, {"s", "a", "s_next", "p"}, "transition")] += float(entry["p"])
    for entry in doc.get("rewards", []):
        rew[_locate(entry, {"s", "a", "s_next", "r"}, "reward")] = float(entry["r"])
    lam = np.zeros(len(states))
    for entry in doc["initial"]:
        if set(entry) != {"s", "p"}:
            raise MdpError(f"initial entry {entry!r} must have exactly the keys ['p', 's']")
        if entry["s"] not in s_idx:
            raise MdpError(f"initial entry references unknown state {entry['s']!r}")
        lam[s_idx[entry["s"]]] += float(entry["p"])
    r_max = doc.get("r_max")
    return MdpSpec(states, terminals, actions, trans, rew, lam,
                   implicit_sink=doc.get("implicit_sink"),
                   r_max=None if r_max is None else float(r_max), name=name)


def to_dict(spec: MdpSpec) -> dict:
    ids = spec.all_states
    doc: dict = {
        "states": list(spec.transient_states),
        "terminals": list(spec.terminal_states),
        "actions": list(spec.actions),
        "transitions": [],
        "rewards": [],
        "initial": [{"s": s, "p": float(p)} for s, p in zip(spec.transient_states, spec.initial_dist) if p != 0.0],
    }
    for s, a, j in zip(*np.nonzero(spec.transition)):
        doc["transitions"].append({"s": ids[s], "a": spec.actions[a], "s_next": ids[j],
                                   "p": float(spec.transition[s, a, j])})
    for s, a, j in zip(*np.nonzero(spec.reward)):
        doc["rewards"].append({"s": ids[s], "a": spec.actions[a], "s_next": ids[j],
                               "r": float(spec.reward[s, a, j])})
    if spec.implicit_sink is not None:
        doc["implicit_sink"] = spec.implicit_sink
    if spec.r_max is not None:
        doc["r_max"] = spec.r_max
    return doc


def load(path: str | Path) -> MdpSpec:
    path = Path(path)
    with path.open() as fh:
        doc = json.load(fh)
    return from_dict(doc, name=path.stem)


def dump(spec: MdpSpec, path: str | Path) -> None:
    with Path(path).open("w") as fh:
        json.dump(to_dict(spec), fh, indent=2)

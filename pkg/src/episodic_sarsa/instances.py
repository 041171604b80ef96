"""Small hand-checkable MDPs used by the tests, the acceptance suite and the CLI."""

from __future__ import annotations

import numpy as np

from .linear_fa import FeatureMatrix
from .mdp import MdpSpec, discount_transform


def one_shot() -> MdpSpec:
    """One transient state, one action, straight to the terminal with reward 1."""
    trans = np.array([[[0.0, 1.0]]])
    rew = np.array([[[0.0, 1.0]]])
    return MdpSpec(("s0",), ("t",), ("a0",), trans, rew, np.array([1.0]), name="one-shot")


def chain1() -> MdpSpec:
    """a0 ends the episode with reward 1; a1 stays with prob 1/2, else ends with reward 2."""
    trans = np.array([[[0.0, 1.0], [0.5, 0.5]]])
    rew = np.array([[[0.0, 1.0], [0.0, 2.0]]])
    return MdpSpec(("s0",), ("t",), ("a0", "a1"), trans, rew, np.array([1.0]), name="chain-1")


def self_loop() -> MdpSpec:
    """Both actions loop on s0 forever (a0 pays 1, a1 pays 0); the terminal is unreachable."""
    trans = np.array([[[1.0, 0.0], [1.0, 0.0]]])
    rew = np.array([[[1.0, 0.0], [0.0, 0.0]]])
    return MdpSpec(("s0",), ("t",), ("a0", "a1"), trans, rew, np.array([1.0]), name="self-loop")


def discounted_self_loop(gamma: float = 0.9) -> MdpSpec:
    return discount_transform(self_loop(), gamma)


def gridlet() -> MdpSpec:
    """A 2x2 grid with actions right/down.

    The intended move happens with prob 0.7, the other move with 0.2, and the
    agent stays put with 0.1.  Leaving the grid from the bottom-right cell
    reaches ``goal`` (+1); leaving it elsewhere reaches ``out`` (-1).  Moves
    inside the grid cost 0.1.  Episodes start uniformly in any cell.
    """
    cells = [(0, 0), (0, 1), (1, 0), (1, 1)]
    states = tuple(f"c{r}{c}" for r, c in cells)
    terminals = ("goal", "out")
    actions = ("right", "down")
    n_succ = len(states) + len(terminals)
    goal, out = len(states), len(states) + 1
    trans = np.zeros((4, 2, n_succ))
    rew = np.zeros((4, 2, n_succ))

    def target(r: int, c: int, move: str) -> int:
        nr, nc = (r, c + 1) if move == "right" else (r + 1, c)
        if nr > 1 or nc > 1:
            return goal if (r, c) == (1, 1) else out
        return cells.index((nr, nc))

    for s, (r, c) in enumerate(cells):
        for a, move in enumerate(actions):
            other = "down" if move == "right" else "right"
            for j, p in ((target(r, c, move), 0.7), (target(r, c, other), 0.2), (s, 0.1)):
                trans[s, a, j] += p
            for j in range(n_succ):
                rew[s, a, j] = {goal: 1.0, out: -1.0}.get(j, -0.1)
    return MdpSpec(states, terminals, actions, trans, rew, np.full(4, 0.25), name="gridlet")


def gridlet_features(spec: MdpSpec, scale: float = 0.5) -> FeatureMatrix:
    """Three features per pair: bias, action-is-right, and distance from the start corner."""
    rows = []
    for s, name in enumerate(spec.transient_states):
        r, c = int(name[1]), int(name[2])
        for a in range(spec.n_actions):
            rows.append([1.0, 1.0 if a == 0 else 0.0, (r + c) / 2.0])
    return FeatureMatrix(scale * np.array(rows))


def canonical_suite() -> dict[str, tuple[MdpSpec, FeatureMatrix]]:
    """The MDP/feature pairs exercised by the acceptance suite."""
    sl = discounted_self_loop(0.9)
    grid = gridlet()
    return {
        "chain-1": (chain1(), FeatureMatrix(np.eye(2))),
        "gridlet": (grid, gridlet_features(grid)),
        "self-loop-gamma0.9": (sl, FeatureMatrix.tabular(sl, scale=0.25)),
    }

"""Independent reference computations used by the tests.

Nothing here calls the package's linear-algebra paths: fundamental matrices
come from truncated Neumann series, values from value iteration, and exact
rationals from Fraction Gaussian elimination.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np


def pair_chain(trans: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """P[(s,a),(s',a')] = p(s'|s,a) pi(a'|s'), built with explicit loops."""
    n_s, n_a = pi.shape
    p = np.zeros((n_s * n_a, n_s * n_a))
    for s in range(n_s):
        for a in range(n_a):
            for s2 in range(n_s):
                for a2 in range(n_a):
                    p[s * n_a + a, s2 * n_a + a2] = trans[s, a, s2] * pi[s2, a2]
    return p


def neumann(p: np.ndarray, terms: int = 200) -> np.ndarray:
    """sum_{k<terms} P^k."""
    out = np.eye(len(p))
    power = np.eye(len(p))
    for _ in range(1, terms):
        power = power @ p
        out = out + power
    return out


def discounted_q(trans: np.ndarray, reward: np.ndarray, pi: np.ndarray, gamma: float, n_states: int,
                 arrival: bool = False, tol: float = 1e-14, max_iter: int = 200_000) -> np.ndarray:
    """Policy evaluation by value iteration on the original discounted MDP.

    Standard convention: q(s,a) = sum_j p(j|s,a) [r(s,a,j) + gamma v(j)].
    ``arrival=True`` discounts each reward to the step it is collected on
    arrival: q(s,a) = gamma sum_j p(j|s,a) [r(s,a,j) + v(j)].  v(terminal) = 0.
    """
    n_a = pi.shape[1]
    q = np.zeros((n_states, n_a))
    r_bar = np.einsum("saj,saj->sa", trans, reward)
    p_trans = trans[:, :, :n_states]
    for _ in range(max_iter):
        v = (pi * q).sum(axis=1)
        ahead = np.einsum("saj,j->sa", p_trans, v)
        new = gamma * (r_bar + ahead) if arrival else r_bar + gamma * ahead
        if np.max(np.abs(new - q)) < tol:
            return new.ravel()
        q = new
    return q.ravel()


def fraction_solve(m: list[list[Fraction]], b: list[Fraction]) -> list[Fraction]:
    """Exact Gaussian elimination."""
    n = len(b)
    aug = [row[:] + [b[i]] for i, row in enumerate(m)]
    for col in range(n):
        piv = next(r for r in range(col, n) if aug[r][col] != 0)
        aug[col], aug[piv] = aug[piv], aug[col]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col] / aug[col][col]
                aug[r] = [x - f * y for x, y in zip(aug[r], aug[col])]
    return [aug[i][n] / aug[i][i] for i in range(n)]


def chain1_uniform_exact() -> dict:
    """Hand-checkable chain-1 quantities under the uniform policy, as exact rationals.

    Pairs: (s0,a0) ends at once; (s0,a1) returns to s0 with prob 1/2 and then
    picks each action with prob 1/2.
    """
    half, quarter = Fraction(1, 2), Fraction(1, 4)
    # I - P, P rows: a0 -> nothing, a1 -> (1/4, 1/4)
    m = [[Fraction(1), Fraction(0)], [-quarter, 1 - quarter]]
    t = fraction_solve(m, [Fraction(1), Fraction(1)])
    mt = [[m[j][i] for j in range(2)] for i in range(2)]
    eta = fraction_solve(mt, [half, half])
    # second moment of T from pair k: (2N - I) t, with N t obtained by one more solve
    nt = fraction_solve(m, t)
    second = [2 * nt[i] - t[i] for i in range(2)]
    var = [second[i] - t[i] ** 2 for i in range(2)]
    q = fraction_solve(m, [Fraction(1), Fraction(1)])  # r_bar = (1, 0.5*0 + 0.5*2) = (1, 1)
    return {"t": t, "eta": eta, "var": var, "second_moment": half * second[0] + half * second[1], "q": q}

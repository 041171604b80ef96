"""Pure-Python episode kernels.

Mirrors ``_core.pyx`` operation for operation (same loop order, same
left-to-right float expressions) so both backends are bit-identical.
"""

from __future__ import annotations

from math import exp

import numpy as np

NEED_UNIFORMS = -1
CAP_EXCEEDED = -2


def _draw(p, last, u):
    acc = 0.0
    for j, pj in enumerate(p):
        acc = acc + pj
        if u < acc:
            return j
    return last


def _policy(kind, eps, temperature, base, phi, theta, n_s, n_a):
    pi = [[0.0] * n_a for _ in range(n_s)]
    mass = 1.0 - n_a * eps
    d = len(theta)
    for s in range(n_s):
        row_pi = pi[s]
        if kind == 0:
            for a in range(n_a):
                row_pi[a] = base[s][a]
            continue
        zmax = 0.0
        best = 0
        for a in range(n_a):
            feats = phi[s * n_a + a]
            q = 0.0
            for k in range(d):
                q = q + feats[k] * theta[k]
            if kind == 1:
                q = q / temperature
            row_pi[a] = q
            if a == 0 or q > zmax:
                zmax = q
                best = a
        if kind == 2:
            for a in range(n_a):
                row_pi[a] = eps + mass * (1.0 if a == best else 0.0)
            continue
        total = 0.0
        for a in range(n_a):
            row_pi[a] = exp(row_pi[a] - zmax)
            total = total + row_pi[a]
        for a in range(n_a):
            row_pi[a] = eps + mass * (row_pi[a] / total)
    return pi


def _last_positive(rows):
    out = []
    for row in rows:
        last = 0
        for a, v in enumerate(row):
            if v > 0.0:
                last = a
        out.append(last)
    return out


def _episode(trans, reward, trans_last, init, init_last, phi, theta, pi, pi_last, uniforms, pos, cap, n_s, n_a):
    d = len(theta)
    h = [0.0] * d
    m = len(uniforms)
    if pos >= m:
        return NEED_UNIFORMS, h, 0.0, pos
    s = _draw(init, init_last, uniforms[pos])
    pos += 1
    if pos >= m:
        return NEED_UNIFORMS, h, 0.0, pos
    a = _draw(pi[s], pi_last[s], uniforms[pos])
    pos += 1
    row = s * n_a + a
    qc = 0.0
    feats = phi[row]
    for k in range(d):
        qc = qc + feats[k] * theta[k]
    ret = 0.0
    steps = 0
    while True:
        if steps >= cap:
            return CAP_EXCEEDED, h, 0.0, pos
        if pos >= m:
            return NEED_UNIFORMS, h, 0.0, pos
        j = _draw(trans[s][a], trans_last[s][a], uniforms[pos])
        pos += 1
        r = reward[s][a][j]
        ret = ret + r
        steps += 1
        feats = phi[row]
        if j >= n_s:
            delta = r - qc
            for k in range(d):
                h[k] = h[k] + feats[k] * delta
            break
        if pos >= m:
            return NEED_UNIFORMS, h, 0.0, pos
        a_next = _draw(pi[j], pi_last[j], uniforms[pos])
        pos += 1
        row_next = j * n_a + a_next
        feats_next = phi[row_next]
        qn = 0.0
        for k in range(d):
            qn = qn + feats_next[k] * theta[k]
        delta = r + qn - qc
        for k in range(d):
            h[k] = h[k] + feats[k] * delta
        s, a, row, qc = j, a_next, row_next, qn
    return steps, h, ret, pos


def policy_table(kind, eps, temperature, base, phi, theta, pi):
    n_s, n_a = pi.shape
    pi[:, :] = _policy(kind, eps, temperature, base.tolist(), phi.tolist(), theta.tolist(), n_s, n_a)


def run_episode(trans, reward, trans_last, init, init_last, phi, theta, kind, eps, temperature, base,
                pi, pi_last, uniforms, cap, h_out):
    n_s, n_a = trans.shape[0], trans.shape[1]
    table = _policy(kind, eps, temperature, base.tolist(), phi.tolist(), theta.tolist(), n_s, n_a)
    pi[:, :] = table
    last = _last_positive(table)
    pi_last[:] = last
    steps, h, ret, _ = _episode(trans.tolist(), reward.tolist(), trans_last.tolist(), init.tolist(), init_last,
                                phi.tolist(), theta.tolist(), table, last, uniforms.tolist(), 0, cap, n_s, n_a)
    h_out[:] = h
    return steps, (ret if steps >= 0 else 0.0)


def run_batch(trans, reward, trans_last, init, init_last, phi, theta, pi, n_episodes, uniforms, pos, cap,
              h_out, len_out, ret_out, start):
    n_s, n_a = trans.shape[0], trans.shape[1]
    args = (trans.tolist(), reward.tolist(), trans_last.tolist(), init.tolist(), init_last, phi.tolist(),
            theta.tolist())
    table = np.asarray(pi).tolist()
    last = _last_positive(table)
    u = uniforms.tolist()
    e = start
    while e < n_episodes:
        steps, h, ret, used = _episode(*args, table, last, u, pos, cap, n_s, n_a)
        if steps < 0:
            if steps == CAP_EXCEEDED:
                e = -1 - e
            break
        h_out[e, :] = h
        len_out[e] = steps
        ret_out[e] = ret
        pos = used
        e += 1
    return e, pos

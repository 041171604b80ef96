# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled episode kernels.

Must stay operation-for-operation identical to ``_fallback.py``: the two
backends are required to produce bit-identical results from the same
uniform stream.
"""

from libc.math cimport exp

cdef long NEED_UNIFORMS = -1
cdef long CAP_EXCEEDED = -2


cdef inline long _draw(const double[:] p, long last, double u) noexcept nogil:
    cdef double acc = 0.0
    cdef long j
    for j in range(p.shape[0]):
        acc = acc + p[j]
        if u < acc:
            return j
    return last


cdef void _policy(long kind, double eps, double temperature, const double[:, :] base,
                  const double[:, :] phi, const double[:] theta, double[:, :] pi) noexcept nogil:
    cdef long n_s = pi.shape[0]
    cdef long n_a = pi.shape[1]
    cdef long d = theta.shape[0]
    cdef long s, a, k, row, best
    cdef double q, zmax, total, mass
    mass = 1.0 - n_a * eps
    for s in range(n_s):
        if kind == 0:
            for a in range(n_a):
                pi[s, a] = base[s, a]
            continue
        zmax = 0.0
        best = 0
        for a in range(n_a):
            row = s * n_a + a
            q = 0.0
            for k in range(d):
                q = q + phi[row, k] * theta[k]
            if kind == 1:
                q = q / temperature
            pi[s, a] = q
            if a == 0 or q > zmax:
                zmax = q
                best = a
        if kind == 2:
            for a in range(n_a):
                pi[s, a] = eps + mass * (1.0 if a == best else 0.0)
            continue
        total = 0.0
        for a in range(n_a):
            pi[s, a] = exp(pi[s, a] - zmax)
            total = total + pi[s, a]
        for a in range(n_a):
            pi[s, a] = eps + mass * (pi[s, a] / total)


cdef long _episode(const double[:, :, :] trans, const double[:, :, :] reward, const long[:, :] trans_last,
                   const double[:] init, long init_last, const double[:, :] phi, const double[:] theta,
                   const double[:, :] pi, const long[:] pi_last, const double[:] uniforms, long pos,
                   long cap, double[:] h_out, double* ret_out, long* used_out) noexcept nogil:
    cdef long n_s = trans.shape[0]
    cdef long n_a = trans.shape[1]
    cdef long d = theta.shape[0]
    cdef long m = uniforms.shape[0]
    cdef long k, s, a, j, a_next, row, row_next, steps
    cdef double qc, qn, r, delta, ret
    for k in range(d):
        h_out[k] = 0.0
    if pos >= m:
        return NEED_UNIFORMS
    s = _draw(init, init_last, uniforms[pos])
    pos += 1
    if pos >= m:
        return NEED_UNIFORMS
    a = _draw(pi[s], pi_last[s], uniforms[pos])
    pos += 1
    row = s * n_a + a
    qc = 0.0
    for k in range(d):
        qc = qc + phi[row, k] * theta[k]
    ret = 0.0
    steps = 0
    while True:
        if steps >= cap:
            return CAP_EXCEEDED
        if pos >= m:
            return NEED_UNIFORMS
        j = _draw(trans[s, a], trans_last[s, a], uniforms[pos])
        pos += 1
        r = reward[s, a, j]
        ret = ret + r
        steps += 1
        if j >= n_s:
            delta = r - qc
            for k in range(d):
                h_out[k] = h_out[k] + phi[row, k] * delta
            break
        if pos >= m:
            return NEED_UNIFORMS
        a_next = _draw(pi[j], pi_last[j], uniforms[pos])
        pos += 1
        row_next = j * n_a + a_next
        qn = 0.0
        for k in range(d):
            qn = qn + phi[row_next, k] * theta[k]
        delta = r + qn - qc
        for k in range(d):
            h_out[k] = h_out[k] + phi[row, k] * delta
        s = j
        a = a_next
        row = row_next
        qc = qn
    ret_out[0] = ret
    used_out[0] = pos
    return steps


cdef void _last_positive(const double[:, :] pi, long[:] out) noexcept nogil:
    cdef long s, a
    for s in range(pi.shape[0]):
        out[s] = 0
        for a in range(pi.shape[1]):
            if pi[s, a] > 0.0:
                out[s] = a


def policy_table(long kind, double eps, double temperature, const double[:, :] base,
                 const double[:, :] phi, const double[:] theta, double[:, :] pi):
    with nogil:
        _policy(kind, eps, temperature, base, phi, theta, pi)


def run_episode(const double[:, :, :] trans, const double[:, :, :] reward, const long[:, :] trans_last,
                const double[:] init, long init_last, const double[:, :] phi, const double[:] theta,
                long kind, double eps, double temperature, const double[:, :] base,
                double[:, :] pi, long[:] pi_last, const double[:] uniforms, long cap, double[:] h_out):
    """One episode under pi_theta; returns (T, return) or (status, 0.0) on failure."""
    cdef double ret = 0.0
    cdef long used = 0
    cdef long steps
    with nogil:
        _policy(kind, eps, temperature, base, phi, theta, pi)
        _last_positive(pi, pi_last)
        steps = _episode(trans, reward, trans_last, init, init_last, phi, theta, pi, pi_last,
                         uniforms, 0, cap, h_out, &ret, &used)
    return steps, ret


def run_batch(const double[:, :, :] trans, const double[:, :, :] reward, const long[:, :] trans_last,
              const double[:] init, long init_last, const double[:, :] phi, const double[:] theta,
              const double[:, :] pi, long n_episodes, const double[:] uniforms, long pos, long cap,
              double[:, :] h_out, long[:] len_out, double[:] ret_out, long start):
    """Episodes ``start..n_episodes-1`` from one uniform stream at a fixed policy.

    Returns ``(next_episode, pos)``; stops early when the buffer runs dry,
    leaving ``pos`` at the start of the unfinished episode.
    """
    cdef long e, steps, used = 0
    cdef double ret = 0.0
    cdef long[:] pi_last
    import numpy as np
    pi_last_arr = np.zeros(pi.shape[0], dtype=np.int64)
    pi_last = pi_last_arr
    with nogil:
        _last_positive(pi, pi_last)
        e = start
        while e < n_episodes:
            steps = _episode(trans, reward, trans_last, init, init_last, phi, theta, pi, pi_last,
                             uniforms, pos, cap, h_out[e], &ret, &used)
            if steps < 0:
                if steps == CAP_EXCEEDED:
                    e = -1 - e
                break
            len_out[e] = steps
            ret_out[e] = ret
            pos = used
            e += 1
    return e, pos

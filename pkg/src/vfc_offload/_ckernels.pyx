# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror ``_pykernels`` one-for-one.

Uniform draws come straight from the numpy bit generator's ``next_double``,
the same routine ``Generator.random`` uses, so the sequential kernels here
consume a stream in the same order as their Python counterparts.
"""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, log1p, fabs, INFINITY
from numpy.random cimport bitgen_t

ctypedef cnp.int64_t i64

cnp.import_array()

BACKEND = "cython"


cdef inline bitgen_t* _bitgen(object gen) except NULL:
    capsule = gen.bit_generator.capsule
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline double _uniform(bitgen_t* rng) noexcept nogil:
    return rng.next_double(rng.state)


cdef void _sweep(const i64[::1] state_ptr, const i64[::1] row_ptr,
                 const i64[::1] cols, const double[::1] probs,
                 const double[::1] reward, double gamma,
                 const double[::1] v, double[::1] out, i64[::1] best_row) noexcept nogil:
    cdef Py_ssize_t n = state_ptr.shape[0] - 1
    cdef Py_ssize_t s, r, j
    cdef double best, q, acc
    cdef i64 arg
    for s in range(n):
        best = -INFINITY
        arg = -1
        for r in range(state_ptr[s], state_ptr[s + 1]):
            acc = 0.0
            for j in range(row_ptr[r], row_ptr[r + 1]):
                acc = acc + probs[j] * v[cols[j]]
            q = reward[r] + gamma * acc
            if q > best:
                best = q
                arg = r
        out[s] = best
        best_row[s] = arg


def bellman_sweep(state_ptr, row_ptr, cols, probs, reward, double gamma, v):
    """One synchronous Bellman update. ``v`` carries a trailing terminal entry."""
    n = state_ptr.shape[0] - 1
    out = np.zeros(n + 1)
    best_row = np.empty(n, dtype=np.int64)
    _sweep(state_ptr, row_ptr, cols, probs, reward, gamma, v, out, best_row)
    return out, best_row


def value_iteration(state_ptr, row_ptr, cols, probs, reward, double gamma, v0,
                    double threshold, i64 max_iterations):
    """Iterate sweeps until the sup-norm step drops below ``threshold``.

    Returns ``(v, iterations, delta, best_row)``; ``iterations`` is -1 when the
    cap is hit.
    """
    cdef Py_ssize_t n = state_ptr.shape[0] - 1
    cdef double[::1] a = np.array(v0, dtype=np.float64, copy=True)
    cdef double[::1] b = np.zeros(n + 1)
    cdef i64[::1] best_row = np.empty(n, dtype=np.int64)
    cdef i64 k = 0, done = 0
    cdef Py_ssize_t s
    cdef double delta = INFINITY, d
    cdef const i64[::1] sp = state_ptr
    cdef const i64[::1] rp = row_ptr
    cdef const i64[::1] cc = cols
    cdef const double[::1] pp = probs
    cdef const double[::1] rr = reward
    a[n] = 0.0
    with nogil:
        while k < max_iterations:
            k += 1
            _sweep(sp, rp, cc, pp, rr, gamma, a, b, best_row)
            delta = 0.0
            for s in range(n):
                d = fabs(b[s] - a[s])
                if d > delta:
                    delta = d
                a[s] = b[s]
            if delta < threshold:
                done = 1
                break
    if not done:
        k = -1
    return np.asarray(a), k, delta, np.asarray(best_row)


def simulate_path(gen, i64 start, i64 terminal, const i64[::1] policy_row,
                  const i64[::1] succ_ptr, const i64[::1] succ_index,
                  const double[::1] succ_cum, const double[::1] sigma,
                  const double[::1] income, const double[::1] cost_rate,
                  const i64[::1] flag, const i64[::1] event_kind,
                  double alpha, double floor):
    """One discounted sample path of the policy's jump process.

    Returns ``(reward, epochs, drops, interruptions, counts)`` where ``counts``
    tallies the event kinds of visited successor states.
    """
    cdef bitgen_t* rng = _bitgen(gen)
    cdef i64 s = start, r, j, hi, epochs = 0, drops = 0, interrupts = 0
    cdef double disc = 1.0, nxt, total = 0.0, u, dt
    counts = np.zeros(4, dtype=np.int64)
    cdef i64[::1] cnt = counts
    while True:
        r = policy_row[s]
        if r < 0:
            raise RuntimeError(f"no decision recorded for state index {s}")
        epochs += 1
        if flag[r] == 1:
            drops += 1
        elif flag[r] == 2:
            interrupts += 1
        total = total + income[r] * disc
        u = _uniform(rng)
        dt = -log1p(-u) / sigma[r]
        nxt = disc * exp(-alpha * dt)
        total = total - cost_rate[r] * (disc - nxt) / alpha
        disc = nxt
        u = _uniform(rng)
        hi = succ_ptr[r + 1] - 1
        j = succ_ptr[r]
        while j < hi and u >= succ_cum[j]:
            j += 1
        s = succ_index[j]
        if s == terminal:
            break
        cnt[event_kind[s]] += 1
        if disc < floor:
            break
    return total, epochs, drops, interrupts, counts


def backoff_slots(gen, double p, i64 w_min, i64 m_stage, i64 trials, bint extra_window):
    """Sum and sum of squares of per-delivery slot counts over ``trials`` chains."""
    cdef bitgen_t* rng = _bitgen(gen)
    cdef i64 t, stage, w, w_max = w_min << m_stage
    cdef double slots, total = 0.0, total_sq = 0.0
    with nogil:
        for t in range(trials):
            stage = 0
            slots = 0.0
            while True:
                w = w_min << (stage if stage < m_stage else m_stage)
                slots += 1.0 + <i64>(_uniform(rng) * w)
                if _uniform(rng) < p:
                    stage += 1
                else:
                    break
            if extra_window and stage > m_stage:
                slots += 1.0 + <i64>(_uniform(rng) * w_max)
            total += slots
            total_sq += slots * slots
    return total, total_sq


def slot_status_counts(gen, double tau, i64 m_vehicles, i64 trials):
    """Counts of idle, success and collision slots among ``trials`` draws."""
    cdef bitgen_t* rng = _bitgen(gen)
    cdef i64 t, k, tx, idle = 0, succ = 0, coll = 0
    with nogil:
        for t in range(trials):
            tx = 0
            for k in range(m_vehicles):
                if _uniform(rng) < tau:
                    tx += 1
            if tx == 0:
                idle += 1
            elif tx == 1:
                succ += 1
            else:
                coll += 1
    return idle, succ, coll


def sample_successors(gen, const double[::1] cum, i64 draws):
    """Histogram of successor positions for ``draws`` samples of one row."""
    cdef bitgen_t* rng = _bitgen(gen)
    cdef i64 n = cum.shape[0], t, j
    cdef double u
    out = np.zeros(n, dtype=np.int64)
    cdef i64[::1] o = out
    with nogil:
        for t in range(draws):
            u = _uniform(rng)
            j = 0
            while j < n - 1 and u >= cum[j]:
                j += 1
            o[j] += 1
    return out

"""Pure-Python/numpy versions of the compiled kernels.

The sweep, the slot-status sampler and the path simulator reproduce the
compiled results bit for bit (same operation order, same uniform stream).
``backoff_slots`` is vectorised instead and only agrees in distribution.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"

_CHUNK = 1 << 18


def _row_values(row_ptr, cols, probs, reward, gamma, v):
    n_rows = row_ptr.shape[0] - 1
    lengths = np.diff(row_ptr)
    # sequential per-row accumulation, matching the compiled loop order
    acc = np.zeros(n_rows)
    terms = probs * v[cols]
    longest = int(lengths.max()) if n_rows else 0
    for k in range(longest):
        live = lengths > k
        acc[live] = acc[live] + terms[row_ptr[:-1][live] + k]
    return reward + gamma * acc


def bellman_sweep(state_ptr, row_ptr, cols, probs, reward, gamma, v):
    n = state_ptr.shape[0] - 1
    q = _row_values(row_ptr, cols, probs, reward, gamma, v)
    starts = state_ptr[:-1]
    best = np.maximum.reduceat(q, starts)
    owner = np.repeat(np.arange(n), np.diff(state_ptr))
    rows = np.arange(q.shape[0])
    marked = np.where(q == best[owner], rows, q.shape[0])
    best_row = np.minimum.reduceat(marked, starts).astype(np.int64)
    out = np.zeros(n + 1)
    out[:n] = best
    return out, best_row


def value_iteration(state_ptr, row_ptr, cols, probs, reward, gamma, v0,
                    threshold, max_iterations):
    n = state_ptr.shape[0] - 1
    v = np.array(v0, dtype=np.float64, copy=True)
    v[n] = 0.0
    delta = math.inf
    best_row = np.empty(n, dtype=np.int64)
    for k in range(1, max_iterations + 1):
        nxt, best_row = bellman_sweep(state_ptr, row_ptr, cols, probs, reward, gamma, v)
        delta = float(np.max(np.abs(nxt[:n] - v[:n]))) if n else 0.0
        v = nxt
        if delta < threshold:
            return v, k, delta, best_row
    return v, -1, delta, best_row


def simulate_path(gen, start, terminal, policy_row, succ_ptr, succ_index, succ_cum,
                  sigma, income, cost_rate, flag, event_kind, alpha, floor):
    s = int(start)
    epochs = drops = interrupts = 0
    disc = 1.0
    total = 0.0
    counts = np.zeros(4, dtype=np.int64)
    uniform = gen.random
    while True:
        r = int(policy_row[s])
        if r < 0:
            raise RuntimeError(f"no decision recorded for state index {s}")
        epochs += 1
        if flag[r] == 1:
            drops += 1
        elif flag[r] == 2:
            interrupts += 1
        total = total + float(income[r]) * disc
        u = uniform()
        dt = -math.log1p(-u) / float(sigma[r])
        nxt = disc * math.exp(-alpha * dt)
        total = total - float(cost_rate[r]) * (disc - nxt) / alpha
        disc = nxt
        u = uniform()
        hi = int(succ_ptr[r + 1]) - 1
        j = int(succ_ptr[r])
        while j < hi and u >= succ_cum[j]:
            j += 1
        s = int(succ_index[j])
        if s == terminal:
            break
        counts[event_kind[s]] += 1
        if disc < floor:
            break
    return total, epochs, drops, interrupts, counts


def backoff_slots(gen, p, w_min, m_stage, trials, extra_window):
    w_max = w_min << m_stage
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < trials:
        size = min(_CHUNK, trials - done)
        # retransmissions before success
        h = gen.geometric(1.0 - p, size=size) - 1 if p > 0 else np.zeros(size, dtype=np.int64)
        slots = np.zeros(size)
        for stage in range(m_stage + 1):
            live = h >= stage
            w = w_min << stage
            slots[live] += gen.integers(1, w + 1, size=int(live.sum()))
        extra = np.maximum(h - m_stage, 0)
        if extra_window:
            extra = extra + (h > m_stage)
        n_extra = int(extra.sum())
        if n_extra:
            draws = gen.integers(1, w_max + 1, size=n_extra)
            owner = np.repeat(np.arange(size), extra)
            slots += np.bincount(owner, weights=draws, minlength=size)
        total += float(slots.sum())
        total_sq += float(np.dot(slots, slots))
        done += size
    return total, total_sq


def slot_status_counts(gen, tau, m_vehicles, trials):
    idle = succ = coll = 0
    done = 0
    per_chunk = max(1, _CHUNK // max(1, m_vehicles))
    while done < trials:
        size = min(per_chunk, trials - done)
        tx = (gen.random((size, m_vehicles)) < tau).sum(axis=1)
        idle += int(np.count_nonzero(tx == 0))
        succ += int(np.count_nonzero(tx == 1))
        coll += int(np.count_nonzero(tx > 1))
        done += size
    return idle, succ, coll


def sample_successors(gen, cum, draws):
    cum = np.asarray(cum)
    n = cum.shape[0]
    out = np.zeros(n, dtype=np.int64)
    done = 0
    while done < draws:
        size = min(_CHUNK, draws - done)
        u = gen.random(size)
        idx = np.minimum(np.searchsorted(cum[:-1], u, side="right"), n - 1)
        out += np.bincount(idx, minlength=n)
        done += size
    return out

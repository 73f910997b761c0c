"""Monte-Carlo checks: policy sample paths, backoff chains and slot statuses.

Replication ``j`` of a run seeded with ``seed`` draws from
``PCG64(SeedSequence(seed, spawn_key=(j,)))``, so replications are
independent, reproducible and can be evaluated in any order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dcf import DcfParams
from .model import EventKind, TransitionTable
from .solver import Policy

__all__ = [
    "SimConfig",
    "SimResult",
    "simulate",
    "mc_backoff_slots",
    "mc_slot_status",
    "sample_successors",
    "write_replications",
]


def stream(seed: int, j: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(j,))))


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    replications: int = 1000
    horizon_discount_floor: float = 1e-6
    initial_state: int | None = None  # table index; defaults to the empty full-fleet arrival state

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0.0 < self.horizon_discount_floor < 1.0:
            raise ValueError("horizon_discount_floor must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class SimResult:
    rewards: np.ndarray
    epochs: np.ndarray
    drops: np.ndarray
    interruptions: np.ndarray
    event_counts: np.ndarray = field(repr=False)  # (replications, 4), by EventKind

    @property
    def replications(self) -> int:
        return self.rewards.shape[0]

    @property
    def mean_discounted_reward(self) -> float:
        return float(np.mean(self.rewards))

    @property
    def std_error(self) -> float:
        n = self.replications
        return float(np.std(self.rewards, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    @property
    def drop_rate(self) -> float:
        """Drops per decision epoch."""
        return float(self.drops.sum() / self.epochs.sum())

    @property
    def interruption_rate(self) -> float:
        return float(self.interruptions.sum() / self.epochs.sum())


def simulate(table: TransitionTable, policy: Policy, sim: SimConfig) -> SimResult:
    """Discounted reward of ``policy`` along independent sample paths."""
    start = table.empty_state() if sim.initial_state is None else int(sim.initial_state)
    if not 0 <= start < table.n_states:
        raise ValueError(f"initial state index {start} is not in the table")
    cum = table.successor_cumulative()
    n = sim.replications
    rewards = np.empty(n)
    epochs = np.empty(n, dtype=np.int64)
    drops = np.empty(n, dtype=np.int64)
    interrupts = np.empty(n, dtype=np.int64)
    counts = np.empty((n, len(EventKind)), dtype=np.int64)
    alpha = table.config.alpha
    for j in range(n):
        rewards[j], epochs[j], drops[j], interrupts[j], counts[j] = kernels.simulate_path(
            stream(sim.seed, j), start, table.terminal, policy.rows, table.succ_ptr,
            table.succ_index, cum, table.sigma, table.income, table.billed, table.flag,
            table.event_kind, alpha, sim.horizon_discount_floor)
    return SimResult(rewards, epochs, drops, interrupts, counts)


def mc_backoff_slots(p: float, w_min: int, m_stage: int, trials: int, seed: int = 0,
                     convention: str = "closed-form") -> tuple[float, float]:
    """Mean slots per delivered sub-task from simulated retransmission chains.

    Each attempt draws its backoff uniformly from ``1..W_l`` and fails with
    probability ``p``; the window doubles up to stage ``m_stage``.
    ``convention="closed-form"`` also charges one extra maximum-window backoff to
    every chain that went past stage ``m_stage``, which is how the closed-form
    slot count tallies those chains. ``"physical"`` omits it.

    Returns ``(mean, standard_error)``.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"collision probability must lie in [0, 1), got {p}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if convention not in ("closed-form", "physical"):
        raise ValueError(f"unknown convention {convention!r}")
    total, total_sq = kernels.backoff_slots(stream(seed), float(p), int(w_min), int(m_stage),
                                            int(trials), convention == "closed-form")
    return _mean_se(total, total_sq, trials)


def mc_slot_status(tau: float, m_vehicles: int, params: DcfParams, i_rus: int,
                   trials: int, seed: int = 0) -> tuple[float, float]:
    """Mean slot duration (us) from ``trials`` draws of ``m_vehicles`` transmit flags."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    idle, succ, coll = kernels.slot_status_counts(stream(seed), float(tau), int(m_vehicles), int(trials))
    durations = (params.slot_us, params.success_time_us(i_rus), params.collision_time_us(i_rus))
    counts = (idle, succ, coll)
    total = sum(c * d for c, d in zip(counts, durations))
    total_sq = sum(c * d * d for c, d in zip(counts, durations))
    return _mean_se(total, total_sq, trials)


def _mean_se(total: float, total_sq: float, n: int) -> tuple[float, float]:
    mean = total / n
    if n < 2:
        return mean, 0.0
    var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
    return mean, math.sqrt(var / n)


def sample_successors(table: TransitionTable, row: int, draws: int, seed: int = 0) -> np.ndarray:
    """Empirical successor counts for one (state, action) row, in table order."""
    lo, hi = table.succ_ptr[row], table.succ_ptr[row + 1]
    cum = np.ascontiguousarray(np.cumsum(table.succ_prob[lo:hi]))
    return kernels.sample_successors(stream(seed), cum, int(draws))


SIM_COLUMNS = ("replication", "discounted_reward", "epochs", "drops", "interruptions")


def write_replications(result: SimResult, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SIM_COLUMNS)
    for j in range(result.replications):
        w.writerow((j, repr(float(result.rewards[j])), int(result.epochs[j]),
                    int(result.drops[j]), int(result.interruptions[j])))


"""Semi-Markov model of RU allocation in a vehicular fog.

A state is ``(M, n_1..n_N, e)``: ``M`` vehicles (one RU each) in the fog,
``n_i`` tasks in service on ``i`` RUs apiece, and the event ``e`` that just
happened. Decisions are only taken on task arrivals. A drop, or a vehicle
leaving while every RU is busy, ends the process in an absorbing zero-value
``TERMINAL`` state.

The model is compiled once into a :class:`TransitionTable`: flat arrays with
one row per feasible (state, action) pair and a CSR block of successors per
row. Solver and simulator only ever read that table.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dcf import DcfParams, dcf_metrics

log = logging.getLogger(__name__)

NO_ACTION = -1
DROP = 0

_SUM_TOL = 1e-12


class ModelError(ValueError):
    """The transition structure violates a model invariant."""


class EventKind(enum.IntEnum):
    ARRIVAL = 0
    DEPARTURE = 1
    VEHICLE_ARRIVAL = 2
    VEHICLE_DEPARTURE = 3


class Event(NamedTuple):
    kind: EventKind
    ru: int = 0  # RUs held by the departing task; 0 for other kinds

    def label(self) -> str:
        return {
            EventKind.ARRIVAL: "A",
            EventKind.DEPARTURE: f"D{self.ru}",
            EventKind.VEHICLE_ARRIVAL: "F+1",
            EventKind.VEHICLE_DEPARTURE: "F-1",
        }[self.kind]

    def order(self, n_max: int) -> int:
        if self.kind is EventKind.ARRIVAL:
            return 0
        if self.kind is EventKind.DEPARTURE:
            return self.ru
        return n_max + (1 if self.kind is EventKind.VEHICLE_ARRIVAL else 2)


ARRIVAL = Event(EventKind.ARRIVAL)
VEHICLE_ARRIVAL = Event(EventKind.VEHICLE_ARRIVAL)
VEHICLE_DEPARTURE = Event(EventKind.VEHICLE_DEPARTURE)


def departure(i: int) -> Event:
    return Event(EventKind.DEPARTURE, i)


class SystemState(NamedTuple):
    m: int
    occupancy: tuple[int, ...]
    event: Event

    @property
    def busy_rus(self) -> int:
        return sum(i * k for i, k in enumerate(self.occupancy, start=1))

    @property
    def available_rus(self) -> int:
        return self.m - self.busy_rus

    def label(self) -> str:
        return "(" + ",".join(map(str, (self.m, *self.occupancy))) + f",{self.event.label()})"


class _Terminal:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "TERMINAL"

    def label(self) -> str:
        return "Terminal"

    def __reduce__(self):
        return (_Terminal, ())


TERMINAL = _Terminal()


def action_label(a: int) -> str:
    return {NO_ACTION: "none", DROP: "drop"}.get(a, f"alloc{a}")


@dataclass(frozen=True)
class SystemConfig:
    """Scenario parameters; rates per second, times in seconds."""

    k_max: int = 12
    n_max: int = 3
    lambda_f: float = 10.0
    mu_f: float = 10.0
    mu_t: float = 25.0
    beta: float = 5.0
    t_local: float = 0.1
    xi: float = 10.0
    eta: float = 18.0
    alpha: float = 0.1
    epsilon_user: float = 10.0
    dcf: DcfParams = field(default_factory=DcfParams)
    # occupancy billed during a sojourn: "post" (after the decision/event) or "pre"
    occupancy_convention: str = "post"
    # task rate with no task in service: "uniform" over i=1..N, or "single" (i=1)
    idle_rate_fallback: str = "uniform"

    def __post_init__(self):
        if not 1 <= self.n_max <= self.k_max:
            raise ValueError(f"need 1 <= n_max <= k_max, got n_max={self.n_max}, k_max={self.k_max}")
        for name in ("lambda_f", "mu_f", "mu_t", "beta", "t_local", "xi", "eta", "alpha",
                     "epsilon_user"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.occupancy_convention not in ("post", "pre"):
            raise ValueError(f"occupancy_convention must be 'post' or 'pre', got {self.occupancy_convention!r}")
        if self.idle_rate_fallback not in ("uniform", "single"):
            raise ValueError(f"idle_rate_fallback must be 'uniform' or 'single', got {self.idle_rate_fallback!r}")

    def processing_delay(self, i: int) -> float:
        return 1.0 / (i * self.mu_t)


class RateTable(NamedTuple):
    """Channel quantities per population ``M`` (row) and split ``i`` (column).

    Index 0 on both axes is unused padding so lookups read ``arrival[M, i]``.
    """

    arrival: np.ndarray  # lambda_t(i; M), tasks/s per vehicle
    delay: np.ndarray  # D_t(i; M), seconds


def rate_table(config: SystemConfig) -> RateTable:
    k, n = config.k_max, config.n_max
    arrival = np.zeros((k + 1, n + 1))
    delay = np.zeros((k + 1, n + 1))
    for m in range(1, k + 1):
        met = dcf_metrics(config.dcf, m, n)
        arrival[m, 1:] = met.task_arrival_rate
        delay[m, 1:] = np.asarray(met.task_delay_us) * 1e-6
    return RateTable(arrival, delay)


def validate(config: SystemConfig, rates: RateTable | None = None) -> list[str]:
    """Soft checks; returns human-readable warnings (empty when clean)."""
    rates = rates or rate_table(config)
    issues = []
    for m in range(1, config.k_max + 1):
        for i in range(1, config.n_max + 1):
            total = rates.delay[m, i] + config.processing_delay(i)
            if total >= config.t_local:
                issues.append(
                    f"offload delay {1e3 * total:.2f} ms at M={m}, i={i} is not below "
                    f"t_local={1e3 * config.t_local:g} ms; allocation income is negative")
    return issues


# -- states and actions ----------------------------------------------------


def _occupancies(m: int, n_max: int):
    """All ``(n_1..n_N)`` with ``sum i*n_i <= m``, lexicographic."""
    def rec(i, budget):
        if i > n_max:
            yield ()
            return
        for k in range(budget // i + 1):
            for rest in rec(i + 1, budget - i * k):
                yield (k, *rest)
    return rec(1, m)


def attachable_events(m: int, occupancy: tuple[int, ...], k_max: int) -> list[Event]:
    events = [ARRIVAL]
    events += [departure(i) for i, k in enumerate(occupancy, start=1) if k >= 1]
    if m < k_max:
        events.append(VEHICLE_ARRIVAL)
    if m > 1:
        events.append(VEHICLE_DEPARTURE)
    return events


def enumerate_states(config: SystemConfig) -> list:
    """Every reachable-by-construction state in canonical order, then ``TERMINAL``."""
    states = []
    for m in range(1, config.k_max + 1):
        for occ in _occupancies(m, config.n_max):
            for e in attachable_events(m, occ, config.k_max):
                states.append(SystemState(m, occ, e))
    n = config.n_max
    states.sort(key=lambda s: (s.m, s.occupancy, s.event.order(n)))
    states.append(TERMINAL)
    return states


def feasible_actions(s: SystemState) -> tuple[int, ...]:
    if s is TERMINAL:
        raise ModelError("no decisions are taken in the terminal state")
    if s.event.kind is not EventKind.ARRIVAL:
        return (NO_ACTION,)
    top = min(len(s.occupancy), s.available_rus)
    return (DROP, *range(1, top + 1))


def _check_feasible(s: SystemState, a: int) -> None:
    if a not in feasible_actions(s):
        raise ModelError(f"action {a} is not feasible in {s.label()}")


# -- rewards and rates -----------------------------------------------------


def _busy(occupancy) -> int:
    return sum(i * k for i, k in enumerate(occupancy, start=1))


def _bump(occupancy: tuple[int, ...], i: int, by: int) -> tuple[int, ...]:
    occ = list(occupancy)
    occ[i - 1] += by
    return tuple(occ)


def income(s: SystemState, a: int, rates: RateTable, config: SystemConfig) -> float:
    """Lump-sum income collected when ``a`` is taken in ``s``."""
    _check_feasible(s, a)
    kind = s.event.kind
    if kind is EventKind.ARRIVAL:
        if a == DROP:
            return -config.xi
        return config.beta * (config.t_local - rates.delay[s.m, a] - config.processing_delay(a))
    if kind is EventKind.VEHICLE_DEPARTURE and s.busy_rus == s.m:
        return -config.eta
    return 0.0


def _mean_task_rate(m: int, occupancy, rates: RateTable, fallback: str) -> float:
    total = sum(occupancy)
    n_max = len(occupancy)
    if total == 0:
        if fallback == "single":
            return float(rates.arrival[m, 1])
        return float(np.mean(rates.arrival[m, 1:n_max + 1]))
    return sum(k * rates.arrival[m, i] for i, k in enumerate(occupancy, start=1)) / total


def expected_task_rate(s: SystemState, rates: RateTable, fallback: str = "uniform") -> float:
    """Per-vehicle task rate averaged over the splits of the tasks in service."""
    if s is TERMINAL:
        raise ModelError("no task rate in the terminal state")
    return _mean_task_rate(s.m, s.occupancy, rates, fallback)


def _sojourn(s: SystemState, a: int):
    """Population and occupancy in force until the next event, or None if the run ends."""
    kind = s.event.kind
    if kind is EventKind.ARRIVAL:
        return None if a == DROP else (s.m, _bump(s.occupancy, a, +1))
    if kind is EventKind.DEPARTURE:
        return s.m, _bump(s.occupancy, s.event.ru, -1)
    if kind is EventKind.VEHICLE_ARRIVAL:
        return s.m + 1, s.occupancy
    if s.busy_rus == s.m:
        return None
    return s.m - 1, s.occupancy


def _rate_terms(s: SystemState, a: int, rates: RateTable, config: SystemConfig):
    """``(task_arrivals, vehicle_arrivals, vehicle_departures, task_departures)``.

    Only defined for (s, a) pairs that do not end the run.
    """
    m, occ = _sojourn(s, a)
    if s.event.kind is EventKind.ARRIVAL:
        tasks = m * rates.arrival[m, a]
    else:
        tasks = m * _mean_task_rate(m, occ, rates, config.idle_rate_fallback)
    lam_f = config.lambda_f if m < config.k_max else 0.0
    mu_f = config.mu_f if m > 1 else 0.0
    deps = [k * i * config.mu_t for i, k in enumerate(occ, start=1)]
    return tasks, lam_f, mu_f, deps


def expected_event_rate(s: SystemState, a: int, rates: RateTable, config: SystemConfig) -> float:
    """Total event rate out of ``s`` under ``a`` (the reciprocal mean sojourn)."""
    _check_feasible(s, a)
    kind = s.event.kind
    fb = config.idle_rate_fallback
    busy = s.busy_rus
    mu_t = config.mu_t
    k_max = config.k_max

    def vehicles(m):
        return (config.lambda_f if m < k_max else 0.0) + (config.mu_f if m > 1 else 0.0)

    if kind is EventKind.ARRIVAL:
        if a == DROP:
            m = s.m
            return m * _mean_task_rate(m, s.occupancy, rates, fb) + vehicles(m) + busy * mu_t
        return s.m * rates.arrival[s.m, a] + vehicles(s.m) + (busy + a) * mu_t
    if kind is EventKind.DEPARTURE:
        i = s.event.ru
        occ = _bump(s.occupancy, i, -1)
        return s.m * _mean_task_rate(s.m, occ, rates, fb) + vehicles(s.m) + (busy - i) * mu_t
    if kind is EventKind.VEHICLE_ARRIVAL:
        m = s.m + 1
    else:
        m = s.m - 1
    return m * _mean_task_rate(m, s.occupancy, rates, fb) + vehicles(m) + busy * mu_t


def billed_rus(s: SystemState, a: int, config: SystemConfig) -> int:
    """RUs charged for during the sojourn after (s, a)."""
    if config.occupancy_convention == "pre":
        return s.busy_rus
    nxt = _sojourn(s, a)
    return s.busy_rus if nxt is None else _busy(nxt[1])


def cost(s: SystemState, a: int, rates: RateTable, config: SystemConfig) -> float:
    """Expected discounted RU-holding cost over the sojourn."""
    _check_feasible(s, a)
    return billed_rus(s, a, config) / (config.alpha + expected_event_rate(s, a, rates, config))


def reward(s: SystemState, a: int, rates: RateTable, config: SystemConfig) -> float:
    return income(s, a, rates, config) - cost(s, a, rates, config)


def _successor_rates(s: SystemState, a: int, rates: RateTable, config: SystemConfig):
    """Successors with their (unnormalised) rates, in canonical event order."""
    nxt = _sojourn(s, a)
    if nxt is None:
        return [(TERMINAL, expected_event_rate(s, a, rates, config))]
    m, occ = nxt
    tasks, lam_f, mu_f, deps = _rate_terms(s, a, rates, config)
    out = [(SystemState(m, occ, ARRIVAL), tasks)]
    out += [(SystemState(m, occ, departure(i)), r) for i, r in enumerate(deps, start=1) if r > 0]
    if lam_f > 0:
        out.append((SystemState(m, occ, VEHICLE_ARRIVAL), lam_f))
    if mu_f > 0:
        out.append((SystemState(m, occ, VEHICLE_DEPARTURE), mu_f))
    return out


def successors(s: SystemState, a: int, rates: RateTable, config: SystemConfig):
    """``[(next_state, probability), ...]`` for action ``a`` in ``s``."""
    _check_feasible(s, a)
    terms = _successor_rates(s, a, rates, config)
    sigma = expected_event_rate(s, a, rates, config)
    numer = math.fsum(r for _, r in terms)
    if not math.isclose(numer, sigma, rel_tol=1e-12):
        raise ModelError(f"rate terms {numer!r} disagree with event rate {sigma!r} at "
                         f"{s.label()}, a={a}")
    out = [(t, r / sigma) for t, r in terms]
    total = math.fsum(p for _, p in out)
    if abs(total - 1.0) > _SUM_TOL or any(p < 0 for _, p in out):
        raise ModelError(f"successor probabilities of {s.label()}, a={a} sum to {total!r}")
    return out


# -- compiled table --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TransitionTable:
    """Flat, read-only view of the model.

    ``state_ptr[s]:state_ptr[s+1]`` are the rows of state ``s`` (actions
    ascending); ``succ_ptr[r]:succ_ptr[r+1]`` the successors of row ``r``.
    State index ``n_states`` is ``TERMINAL``.
    """

    config: SystemConfig
    rates: RateTable
    states: list
    index: dict
    state_ptr: np.ndarray
    row_state: np.ndarray
    action: np.ndarray
    sigma: np.ndarray
    income: np.ndarray
    billed: np.ndarray
    cost: np.ndarray
    reward: np.ndarray
    flag: np.ndarray  # 0 ordinary, 1 drop, 2 interrupted task
    succ_ptr: np.ndarray
    succ_index: np.ndarray
    succ_rate: np.ndarray
    succ_prob: np.ndarray
    event_kind: np.ndarray

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def terminal(self) -> int:
        return len(self.states)

    @property
    def n_rows(self) -> int:
        return self.action.shape[0]

    def rows(self, s: int) -> range:
        return range(int(self.state_ptr[s]), int(self.state_ptr[s + 1]))

    def row_of(self, state: SystemState, a: int) -> int:
        s = self.index[state]
        for r in self.rows(s):
            if self.action[r] == a:
                return r
        raise ModelError(f"action {a} is not feasible in {state.label()}")

    def state_at(self, idx: int):
        return TERMINAL if idx == self.terminal else self.states[idx]

    def successor_cumulative(self) -> np.ndarray:
        """Per-row running sums of successor probabilities (last entry of each row is ~1)."""
        cum = np.empty_like(self.succ_prob)
        for r in range(self.n_rows):
            lo, hi = self.succ_ptr[r], self.succ_ptr[r + 1]
            cum[lo:hi] = np.cumsum(self.succ_prob[lo:hi])
        return cum

    def arrival_states(self) -> np.ndarray:
        return np.flatnonzero(self.event_kind == EventKind.ARRIVAL)

    def empty_state(self, m: int | None = None) -> int:
        """Index of ``(m, 0..0, A)``; ``m`` defaults to ``k_max``."""
        m = self.config.k_max if m is None else m
        return self.index[SystemState(m, (0,) * self.config.n_max, ARRIVAL)]


_warned: set[str] = set()


def build_table(config: SystemConfig, rates: RateTable | None = None) -> TransitionTable:
    rates = rates or rate_table(config)
    for msg in validate(config, rates)[:1]:
        if msg not in _warned:
            _warned.add(msg)
            log.warning("%s (and possibly others)", msg)
    all_states = enumerate_states(config)
    states = all_states[:-1]
    index = {s: k for k, s in enumerate(states)}
    terminal = len(states)

    state_ptr = [0]
    row_state, action, sigma, inc, billed, flag = [], [], [], [], [], []
    succ_ptr = [0]
    succ_index, succ_rate, succ_prob = [], [], []
    for k, s in enumerate(states):
        for a in feasible_actions(s):
            sig = expected_event_rate(s, a, rates, config)
            terms = _successor_rates(s, a, rates, config)
            numer = math.fsum(r for _, r in terms)
            if not math.isclose(numer, sig, rel_tol=1e-12):
                raise ModelError(f"rate terms {numer!r} disagree with event rate {sig!r} "
                                 f"at {s.label()}, a={a}")
            for t, r in terms:
                if t is TERMINAL:
                    succ_index.append(terminal)
                else:
                    try:
                        succ_index.append(index[t])
                    except KeyError:
                        raise ModelError(f"{s.label()}, a={a} leads to unknown state {t!r}") from None
                succ_rate.append(r)
                succ_prob.append(r / sig)
            total = math.fsum(succ_prob[succ_ptr[-1]:])
            if abs(total - 1.0) > _SUM_TOL:
                raise ModelError(f"successor probabilities of {s.label()}, a={a} sum to {total!r}")
            succ_ptr.append(len(succ_index))
            row_state.append(k)
            action.append(a)
            sigma.append(sig)
            inc.append(income(s, a, rates, config))
            billed.append(billed_rus(s, a, config))
            if a == DROP:
                flag.append(1)
            elif s.event.kind is EventKind.VEHICLE_DEPARTURE and s.busy_rus == s.m:
                flag.append(2)
            else:
                flag.append(0)
        state_ptr.append(len(action))

    sigma_a = np.asarray(sigma)
    billed_a = np.asarray(billed, dtype=np.float64)
    cost_a = billed_a / (config.alpha + sigma_a)
    income_a = np.asarray(inc)
    return TransitionTable(
        config=config,
        rates=rates,
        states=states,
        index=index,
        state_ptr=np.asarray(state_ptr, dtype=np.int64),
        row_state=np.asarray(row_state, dtype=np.int64),
        action=np.asarray(action, dtype=np.int64),
        sigma=sigma_a,
        income=income_a,
        billed=billed_a,
        cost=cost_a,
        reward=income_a - cost_a,
        flag=np.asarray(flag, dtype=np.int64),
        succ_ptr=np.asarray(succ_ptr, dtype=np.int64),
        succ_index=np.asarray(succ_index, dtype=np.int64),
        succ_rate=np.asarray(succ_rate),
        succ_prob=np.asarray(succ_prob),
        event_kind=np.asarray([s.event.kind for s in states], dtype=np.int64),
    )


TABLE_COLUMNS = ("state", "action", "sigma", "reward", "successor", "probability")


def write_table(table: TransitionTable, fh) -> None:
    """Dump one tab-separated line per (state, action, successor)."""
    w = csv.writer(fh, delimiter="\t", lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in range(table.n_rows):
        s = table.states[table.row_state[r]]
        for j in range(table.succ_ptr[r], table.succ_ptr[r + 1]):
            t = table.state_at(int(table.succ_index[j]))
            w.writerow((s.label(), int(table.action[r]), repr(float(table.sigma[r])),
                        repr(float(table.reward[r])), t.label(), repr(float(table.succ_prob[j]))))


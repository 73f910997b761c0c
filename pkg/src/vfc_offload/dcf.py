"""802.11p DCF saturation analysis.

Everything here is a pure function of the MAC constants, the number of
contending vehicles ``M`` and the number of resource units ``i`` a task is
split across. Durations are in microseconds at the interface; rates are per
second.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

__all__ = [
    "DcfParams",
    "DcfMetrics",
    "FixedPointError",
    "solve_fixed_point",
    "transmission_probability",
    "expected_slots",
    "expected_slots_parts",
    "slot_probabilities",
    "slot_time_us",
    "subtask_delay_us",
    "task_transmission_delay_us",
    "task_arrival_rate",
    "dcf_metrics",
]

_DAMPING = 0.5
_MAX_ITER = 100_000
_RESIDUAL_TOL = 1e-12


class FixedPointError(RuntimeError):
    """The tau/p fixed point could not be solved to tolerance."""


@dataclass(frozen=True)
class DcfParams:
    """MAC-layer constants. Defaults are the 802.11p values used for the VFC scenario."""

    w_min: int = 3
    m_stage: int = 1
    slot_us: float = 20.0
    sifs_us: float = 10.0
    difs_us: float = 50.0
    header_us: float = 229.0
    ack_us: float = 304.0
    propagation_us: float = 2.0
    payload_bytes: float = 1920.0
    data_rate_mbps: float = 6.0

    def __post_init__(self):
        if int(self.w_min) != self.w_min or self.w_min < 1:
            raise ValueError(f"w_min must be an integer >= 1, got {self.w_min}")
        if int(self.m_stage) != self.m_stage or self.m_stage < 0:
            raise ValueError(f"m_stage must be an integer >= 0, got {self.m_stage}")
        for name in ("slot_us", "sifs_us", "difs_us", "header_us", "ack_us",
                     "propagation_us", "payload_bytes", "data_rate_mbps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")

    @property
    def ack_timeout_us(self) -> float:
        return self.ack_us + self.propagation_us + self.difs_us

    @property
    def payload_us(self) -> float:
        """Airtime of the whole task payload (bits / Mbps = microseconds)."""
        return self.payload_bytes * 8.0 / self.data_rate_mbps

    def success_time_us(self, i_rus: int) -> float:
        _check_rus(i_rus)
        return (self.header_us + self.payload_us / i_rus + self.sifs_us
                + self.propagation_us + self.ack_us + self.propagation_us + self.difs_us)

    def collision_time_us(self, i_rus: int) -> float:
        _check_rus(i_rus)
        return (self.header_us + self.payload_us / i_rus + self.sifs_us
                + self.propagation_us + self.ack_timeout_us)


@dataclass(frozen=True)
class DcfMetrics:
    """Channel operating point for ``m_vehicles`` contenders.

    Per-allocation quantities are tuples indexed by ``i - 1`` for ``i = 1..n_max``.
    """

    m_vehicles: int
    tau: float
    p_coll: float
    p_idle: float
    p_succ: float
    p_col: float
    expected_slots: float
    slot_time_us: tuple[float, ...]
    subtask_delay_us: tuple[float, ...]
    task_delay_us: tuple[float, ...]
    task_arrival_rate: tuple[float, ...]


def _check_rus(i_rus: int) -> None:
    if i_rus < 1:
        raise ValueError(f"i_rus must be >= 1, got {i_rus}")


def _check_vehicles(m_vehicles: int) -> None:
    if m_vehicles < 1:
        raise ValueError(f"m_vehicles must be >= 1, got {m_vehicles}")


def transmission_probability(p: float, w_min: int, m_stage: int) -> float:
    """Per-slot transmission probability given the collision probability.

    The ``(1 - 2p)`` factor is cancelled analytically, ``1 - (2p)^m`` being
    ``(1 - 2p) * sum_{k<m} (2p)^k``, so ``p = 1/2`` needs no special case.
    """
    geo = sum((2.0 * p) ** k for k in range(m_stage))
    return 2.0 / (w_min + 1 + p * w_min * geo)


def _collision_probability(tau: float, m_vehicles: int) -> float:
    return 1.0 - (1.0 - tau) ** (m_vehicles - 1)


def _residual(tau: float, p: float, w_min: int, m_stage: int, m_vehicles: int) -> float:
    return (abs(tau - transmission_probability(p, w_min, m_stage))
            + abs(p - _collision_probability(tau, m_vehicles)))


def solve_fixed_point(params: DcfParams, m_vehicles: int) -> tuple[float, float]:
    """Solve the coupled (tau, p) saturation equations for ``m_vehicles`` stations.

    Damped iteration first; bisection on ``tau - f(g(tau))`` if that stalls.
    """
    return _solve_fixed_point(params.w_min, params.m_stage, m_vehicles)


@lru_cache(maxsize=1024)
def _solve_fixed_point(w_min: int, m_stage: int, m_vehicles: int) -> tuple[float, float]:
    _check_vehicles(m_vehicles)

    def composite(tau):
        return transmission_probability(_collision_probability(tau, m_vehicles), w_min, m_stage)

    tau = transmission_probability(0.0, w_min, m_stage)
    for _ in range(_MAX_ITER):
        nxt = (1.0 - _DAMPING) * tau + _DAMPING * composite(tau)
        if nxt == tau:
            break
        tau = nxt
    p = _collision_probability(tau, m_vehicles)
    res = _residual(tau, p, w_min, m_stage, m_vehicles)
    if res < _RESIDUAL_TOL:
        return tau, p

    # h(tau) = tau - composite(tau) is increasing; h(0) < 0 <= h(1)
    lo, hi = 0.0, 1.0
    while True:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if mid - composite(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    tau = lo if abs(lo - composite(lo)) <= abs(hi - composite(hi)) else hi
    p = _collision_probability(tau, m_vehicles)
    res = _residual(tau, p, w_min, m_stage, m_vehicles)
    if not res < _RESIDUAL_TOL:
        raise FixedPointError(
            f"tau/p fixed point did not converge for M={m_vehicles} "
            f"(w_min={w_min}, m={m_stage}): residual {res:.3e}")
    return tau, p


def expected_slots_parts(p: float, w_min: int, m_stage: int) -> tuple[float, float]:
    """Closed forms of the mean slot count split at backoff stage ``m_stage``.

    Returns ``(E[N1], E[N2])``: the contributions from deliveries needing at
    most ``m_stage`` retransmissions and from those needing more.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"collision probability must lie in [0, 1), got {p}")
    m, w = m_stage, w_min
    pm1 = p ** (m + 1)
    # (1 - (2p)^{m+1}) / (1 - 2p), written as the finite geometric sum
    geo = sum((2.0 * p) ** k for k in range(m + 1))
    n1 = ((1.0 - (m + 2) * pm1 + (m + 1) * pm1 * p) / (2.0 * (1.0 - p))
          + (1.0 - p) * geo * w
          - (1.0 - pm1) * w / 2.0)
    n2 = pm1 / 2.0 * (m + 1 + (2 ** (m + 1) - 1) * w
                      + (2.0 - p) * (2 ** m * w + 1) / (1.0 - p))
    return n1, n2


def expected_slots(p: float, w_min: int, m_stage: int) -> float:
    """Mean number of slots to deliver one sub-task at collision probability ``p``."""
    n1, n2 = expected_slots_parts(p, w_min, m_stage)
    return n1 + n2


def slot_probabilities(tau: float, m_vehicles: int) -> tuple[float, float, float]:
    """``(P_idle, P_succ, P_col)``; the collision share is the complement."""
    _check_vehicles(m_vehicles)
    p_idle = (1.0 - tau) ** m_vehicles
    p_succ = m_vehicles * tau * (1.0 - tau) ** (m_vehicles - 1)
    return p_idle, p_succ, 1.0 - p_idle - p_succ


def slot_time_us(params: DcfParams, m_vehicles: int, i_rus: int, tau: float | None = None) -> float:
    """Mean duration of a generic slot when sub-tasks are 1/i of the payload.

    ``tau`` defaults to the saturation fixed point for ``m_vehicles``.
    """
    _check_rus(i_rus)
    if tau is None:
        tau, _ = solve_fixed_point(params, m_vehicles)
    p_idle, p_succ, p_col = slot_probabilities(tau, m_vehicles)
    return (p_idle * params.slot_us + p_col * params.collision_time_us(i_rus)
            + p_succ * params.success_time_us(i_rus))


def subtask_delay_us(params: DcfParams, m_vehicles: int, i_rus: int) -> float:
    tau, p = solve_fixed_point(params, m_vehicles)
    return expected_slots(p, params.w_min, params.m_stage) * slot_time_us(params, m_vehicles, i_rus, tau)


def task_transmission_delay_us(params: DcfParams, m_vehicles: int, i_rus: int) -> float:
    """Time to push all ``i_rus`` sub-tasks of one task through the channel, in turn."""
    return i_rus * subtask_delay_us(params, m_vehicles, i_rus)


def task_arrival_rate(params: DcfParams, m_vehicles: int, i_rus: int) -> float:
    """Per-vehicle task arrival rate (1/s) under a saturated channel.

    A vehicle offers its next task once the current one, all ``i_rus``
    sub-tasks, has been delivered, so the rate is the reciprocal of the task
    transmission delay. It falls both with contention and with the split count.
    """
    return 1e6 / task_transmission_delay_us(params, m_vehicles, i_rus)


@lru_cache(maxsize=1024)
def dcf_metrics(params: DcfParams, m_vehicles: int, n_max: int) -> DcfMetrics:
    """All channel quantities for ``i = 1..n_max``, memoised per (params, M, N)."""
    tau, p = solve_fixed_point(params, m_vehicles)
    p_idle, p_succ, p_col = slot_probabilities(tau, m_vehicles)
    e_n = expected_slots(p, params.w_min, params.m_stage)
    slot = tuple(slot_time_us(params, m_vehicles, i, tau) for i in range(1, n_max + 1))
    sub = tuple(e_n * t for t in slot)
    task = tuple(i * d for i, d in zip(range(1, n_max + 1), sub))
    return DcfMetrics(
        m_vehicles=m_vehicles,
        tau=tau,
        p_coll=p,
        p_idle=p_idle,
        p_succ=p_succ,
        p_col=p_col,
        expected_slots=e_n,
        slot_time_us=slot,
        subtask_delay_us=sub,
        task_delay_us=task,
        task_arrival_rate=tuple(1e6 / d for d in task),
    )


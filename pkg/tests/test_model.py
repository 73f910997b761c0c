import io
import itertools
import math
from collections import deque

import numpy as np
import pytest

from vfc_offload.model import (ARRIVAL, DROP, NO_ACTION, TERMINAL, VEHICLE_ARRIVAL,
                               VEHICLE_DEPARTURE, EventKind, ModelError, SystemConfig,
                               SystemState, build_table, cost, departure, enumerate_states,
                               expected_event_rate, expected_task_rate, feasible_actions,
                               income, rate_table, successors, write_table)


def brute_force_states(k_max, n_max):
    """Every (m, n, e) satisfying the occupancy and population constraints, by exhaustion."""
    found = set()
    events = [("A", 0), ("F+", 0), ("F-", 0)] + [("D", i) for i in range(1, n_max + 1)]
    for m in range(1, k_max + 1):
        for occ in itertools.product(range(k_max + 1), repeat=n_max):
            if sum((i + 1) * k for i, k in enumerate(occ)) > m:
                continue
            for kind, i in events:
                if kind == "D" and occ[i - 1] == 0:
                    continue
                if kind == "F+" and m == k_max:
                    continue
                if kind == "F-" and m == 1:
                    continue
                found.add((m, occ, kind, i))
    return found


def as_tuple(s):
    kind = {EventKind.ARRIVAL: "A", EventKind.DEPARTURE: "D",
            EventKind.VEHICLE_ARRIVAL: "F+", EventKind.VEHICLE_DEPARTURE: "F-"}[s.event.kind]
    return (s.m, s.occupancy, kind, s.event.ru if kind == "D" else 0)


def cfg(**kw):
    return SystemConfig(**kw)


def test_smallest_system_by_hand():
    states = enumerate_states(cfg(k_max=1, n_max=1))
    assert states[-1] is TERMINAL
    assert set(states[:-1]) == {SystemState(1, (0,), ARRIVAL), SystemState(1, (1,), ARRIVAL),
                                SystemState(1, (1,), departure(1))}
    assert len(states) == 4


@pytest.mark.parametrize("k,n", [(1, 1), (2, 1), (3, 2), (6, 3), (12, 3)])
def test_enumeration_matches_brute_force(k, n):
    states = enumerate_states(cfg(k_max=k, n_max=n))[:-1]
    got = [as_tuple(s) for s in states]
    assert len(got) == len(set(got))
    assert set(got) == brute_force_states(k, n)


def test_every_state_reachable_from_empty_system():
    config = cfg(k_max=6)
    rates = rate_table(config)
    start = SystemState(6, (0, 0, 0), ARRIVAL)
    seen = {start}
    todo = deque([start])
    while todo:
        s = todo.popleft()
        for a in feasible_actions(s):
            for t, _ in successors(s, a, rates, config):
                if t is not TERMINAL and t not in seen:
                    seen.add(t)
                    todo.append(t)
    assert seen == set(enumerate_states(config)[:-1])


def test_feasible_actions_examples():
    assert feasible_actions(SystemState(10, (1, 1, 1), ARRIVAL)) == (DROP, 1, 2, 3)
    assert feasible_actions(SystemState(3, (3, 0, 0), ARRIVAL)) == (DROP,)
    assert feasible_actions(SystemState(4, (1, 0, 0), ARRIVAL)) == (DROP, 1, 2, 3)
    assert feasible_actions(SystemState(4, (0, 1, 0), ARRIVAL)) == (DROP, 1, 2)
    assert feasible_actions(SystemState(5, (0, 1, 0), departure(2))) == (NO_ACTION,)
    with pytest.raises(ModelError):
        feasible_actions(TERMINAL)


def test_income_examples():
    config = cfg()
    rates = rate_table(config)
    assert income(SystemState(5, (0, 0, 0), ARRIVAL), DROP, rates, config) == -10.0
    assert income(SystemState(4, (1, 0, 1), VEHICLE_DEPARTURE), NO_ACTION, rates, config) == -18.0
    assert income(SystemState(5, (1, 0, 1), VEHICLE_DEPARTURE), NO_ACTION, rates, config) == 0.0
    assert income(SystemState(5, (1, 0, 1), departure(1)), NO_ACTION, rates, config) == 0.0
    s = SystemState(5, (0, 0, 0), ARRIVAL)
    d = rates.delay[5, 2] + 1 / (2 * 25.0)
    assert income(s, 2, rates, config) == pytest.approx(5.0 * (0.1 - d))
    with pytest.raises(ModelError):
        income(SystemState(3, (3, 0, 0), ARRIVAL), 1, rates, config)


def test_expected_task_rate_examples():
    config = cfg()
    rates = rate_table(config)
    lam = rates.arrival[6]
    assert expected_task_rate(SystemState(6, (2, 0, 0), ARRIVAL), rates) == pytest.approx(lam[1])
    assert expected_task_rate(SystemState(6, (1, 1, 0), ARRIVAL), rates) == pytest.approx((lam[1] + lam[2]) / 2)
    assert expected_task_rate(SystemState(6, (0, 0, 0), ARRIVAL), rates) == pytest.approx(lam[1:4].mean())
    assert expected_task_rate(SystemState(6, (0, 0, 0), ARRIVAL), rates, "single") == lam[1]


def test_event_rate_by_hand():
    config = cfg()
    rates = rate_table(config)
    lam = rates.arrival
    # allocate 2 RUs with one single-RU task running; 6 vehicles
    s = SystemState(6, (1, 0, 0), ARRIVAL)
    assert expected_event_rate(s, 2, rates, config) == pytest.approx(
        6 * lam[6, 2] + 10 + 10 + (1 + 2) * 25.0)
    # full fleet: no more vehicles can join
    s = SystemState(12, (0, 0, 0), ARRIVAL)
    assert expected_event_rate(s, 1, rates, config) == pytest.approx(12 * lam[12, 1] + 10 + 25.0)
    # a vehicle arrives: population becomes 7
    s = SystemState(6, (0, 1, 0), VEHICLE_ARRIVAL)
    assert expected_event_rate(s, NO_ACTION, rates, config) == pytest.approx(
        7 * lam[7, 2] + 10 + 10 + 2 * 25.0)


def test_drop_leads_to_terminal():
    config = cfg(k_max=5)
    rates = rate_table(config)
    s = SystemState(5, (1, 1, 0), ARRIVAL)
    assert successors(s, DROP, rates, config) == [(TERMINAL, 1.0)]


def test_busy_vehicle_leaving_ends_run():
    config = cfg(k_max=5)
    rates = rate_table(config)
    s = SystemState(3, (1, 1, 0), VEHICLE_DEPARTURE)
    assert successors(s, NO_ACTION, rates, config) == [(TERMINAL, 1.0)]
    s = SystemState(4, (1, 1, 0), VEHICLE_DEPARTURE)
    nxt = {t for t, _ in successors(s, NO_ACTION, rates, config)}
    assert all(t.m == 3 and t.occupancy == (1, 1, 0) for t in nxt)


def test_idle_cost_is_zero():
    config = cfg(k_max=5)
    rates = rate_table(config)
    assert cost(SystemState(4, (0, 0, 0), VEHICLE_ARRIVAL), NO_ACTION, rates, config) == 0.0
    assert cost(SystemState(5, (0, 0, 0), VEHICLE_DEPARTURE), NO_ACTION, rates, config) == 0.0


def test_pre_and_post_occupancy_billing():
    rates = rate_table(cfg(k_max=5))
    s = SystemState(5, (1, 0, 0), ARRIVAL)
    post, pre = cfg(k_max=5), cfg(k_max=5, occupancy_convention="pre")
    sig = expected_event_rate(s, 2, rates, post)
    assert cost(s, 2, rates, post) == pytest.approx(3 / (0.1 + sig))
    assert cost(s, 2, rates, pre) == pytest.approx(1 / (0.1 + sig))


@pytest.fixture(scope="module")
def big():
    return build_table(cfg(k_max=12, n_max=3))


def test_full_table_rows_sum_to_one(big):
    sums = np.add.reduceat(big.succ_prob, big.succ_ptr[:-1])
    assert np.all(np.abs(sums - 1.0) <= 1e-12)
    assert np.all(big.succ_prob > 0)


def test_full_table_sigma_is_rate_sum(big):
    for r in range(big.n_rows):
        lo, hi = big.succ_ptr[r], big.succ_ptr[r + 1]
        rates = big.succ_rate[lo:hi]
        assert math.isclose(math.fsum(rates), big.sigma[r], rel_tol=1e-12)


def test_full_table_state_count(big):
    assert big.n_states == len(brute_force_states(12, 3))


def test_table_actions_cover_feasible_sets(big):
    for s, state in enumerate(big.states):
        acts = tuple(int(big.action[r]) for r in big.rows(s))
        assert acts == feasible_actions(state)


def test_table_reward_is_income_minus_cost(big):
    np.testing.assert_allclose(big.reward, big.income - big.billed / (big.config.alpha + big.sigma))


def test_table_flags(big):
    drops = big.flag == 1
    assert np.all(big.action[drops] == DROP)
    assert np.all(big.income[big.flag == 2] == -big.config.eta)


def test_empty_state_lookup(big):
    s = big.states[big.empty_state()]
    assert s == SystemState(12, (0, 0, 0), ARRIVAL)
    assert big.states[big.empty_state(7)].m == 7


def test_write_table_round_trip():
    table = build_table(cfg(k_max=2, n_max=1))
    buf = io.StringIO()
    write_table(table, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split("\t") == ["state", "action", "sigma", "reward", "successor", "probability"]
    assert len(lines) == 1 + table.succ_index.shape[0]
    assert "TERMINAL" in buf.getvalue() or "Terminal" in buf.getvalue()


def test_build_is_deterministic():
    a, b = build_table(cfg(k_max=6)), build_table(cfg(k_max=6))
    for name in ("sigma", "reward", "succ_index", "succ_prob"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


@pytest.mark.parametrize("kw", [dict(n_max=0), dict(k_max=2, n_max=3), dict(mu_t=0.0),
                                dict(occupancy_convention="mid"), dict(idle_rate_fallback="max")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SystemConfig(**kw)


def test_vehicle_events_respect_bounds(big):
    for s in big.states:
        if s.event == VEHICLE_ARRIVAL:
            assert s.m < 12
        if s.event == VEHICLE_DEPARTURE:
            assert s.m > 1

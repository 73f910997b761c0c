import dataclasses
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vfc_offload.model import DROP, NO_ACTION, SystemConfig, SystemState, ARRIVAL, build_table
from vfc_offload.solver import (ConvergenceError, NormalizedTable, Policy, SolverParams,
                                UniformizationError, bellman_operator, evaluate_policy,
                                extract_policy, greedy_policy, normalize, solve, solver_params,
                                uniformization_rate, value_iteration, write_report)


def dense(nt, rows):
    """Transition matrix and reward vector of one row per state (terminal dropped)."""
    n = nt.n_states
    P = np.zeros((n, n))
    for s, r in enumerate(rows):
        for j in range(nt.row_ptr[r], nt.row_ptr[r + 1]):
            c = nt.cols[j]
            if c < n:
                P[s, c] += nt.probs[j]
    return P, nt.reward[np.asarray(rows)]


def policy_iteration(nt):
    """Exact optimum by Howard's policy iteration with dense solves."""
    n = nt.n_states
    rows = np.array([nt.state_ptr[s] for s in range(n)])
    while True:
        P, r = dense(nt, rows)
        v = np.linalg.solve(np.eye(n) - nt.gamma * P, r)
        vp = np.append(v, 0.0)
        q = np.array([nt.reward[k] + nt.gamma * np.dot(nt.probs[nt.row_ptr[k]:nt.row_ptr[k + 1]],
                                                          vp[nt.cols[nt.row_ptr[k]:nt.row_ptr[k + 1]]])
                      for k in range(nt.row_ptr.shape[0] - 1)])
        new = rows.copy()
        for s in range(n):
            lo, hi = nt.state_ptr[s], nt.state_ptr[s + 1]
            best = lo + int(np.argmax(q[lo:hi]))
            if q[best] > q[rows[s]] + 1e-12:
                new[s] = best
        if np.array_equal(new, rows):
            return v, rows
        rows = new


def toy(reward, probs, gamma_rate=(1.0, 0.1)):
    """Hand-built single-state normalised table, one row per entry of ``reward``."""
    y, alpha = gamma_rate
    params = SolverParams(alpha=alpha, epsilon_user=1e-9, y_rate=y)
    k = len(reward)
    row_ptr = np.arange(k + 1, dtype=np.int64)
    return NormalizedTable(None, params, np.array([0, k], dtype=np.int64),
                           np.asarray(reward, dtype=float), row_ptr,
                           np.zeros(k, dtype=np.int64), np.asarray(probs, dtype=float))


@pytest.fixture(scope="module")
def k5():
    table = build_table(SystemConfig(k_max=5))
    return table, normalize(table, solver_params(table))


@pytest.fixture(scope="module")
def k5_exact(k5):
    return policy_iteration(k5[1])


def test_single_state_geometric_sum(backend):
    nt = toy([2.0], [1.0])
    v, k, _ = value_iteration(nt)
    assert v[0] == pytest.approx(2.0 / (1 - nt.gamma), rel=1e-9)


def test_zero_rewards_stop_immediately(k5, backend):
    table, nt = k5
    z = dataclasses.replace(nt, reward=np.zeros_like(nt.reward))
    v, k, delta = value_iteration(z)
    assert k == 1 and delta == 0.0
    assert np.all(v == 0.0)
    assert np.all(evaluate_policy(z, greedy_policy(table)) == 0.0)


def test_ties_resolve_to_first_row(backend):
    nt = toy([1.0, 1.0, 0.5], [1.0, 1.0, 1.0])
    v, _, _ = value_iteration(nt)
    _, rows = bellman_operator(nt, v)
    assert rows[0] == 0


def test_contraction_on_random_pairs(k5):
    _, nt = k5
    rng = np.random.default_rng(2024)
    for _ in range(100):
        u, w = rng.normal(scale=50, size=(2, nt.n_states))
        tu, _ = bellman_operator(nt, u)
        tw, _ = bellman_operator(nt, w)
        assert np.max(np.abs(tu - tw)) <= nt.gamma * np.max(np.abs(u - w)) * (1 + 1e-12)


def test_converged_values_match_linear_solve(k5, k5_exact):
    table, _ = k5
    tight = normalize(table, solver_params(table, epsilon_user=1e-8))
    v, _, _ = value_iteration(tight)
    v_star, rows = k5_exact
    assert np.max(np.abs(v - v_star)) < 1e-6
    assert np.array_equal(extract_policy(tight, v).rows, rows)


def test_stopping_rule_guarantee(k5, k5_exact):
    table, nt = k5
    eps = nt.params.epsilon_user
    assert eps == 10.0
    v, k, delta = value_iteration(nt)
    assert delta < nt.params.threshold
    assert nt.params.threshold == pytest.approx(eps * (1 - nt.gamma) / (2 * nt.gamma))
    v_star, _ = k5_exact
    assert np.max(np.abs(v - v_star)) < eps / 2
    pol = extract_policy(nt, v)
    P, r = dense(nt, pol.rows)
    v_pol = np.linalg.solve(np.eye(nt.n_states) - nt.gamma * P, r)
    assert np.max(v_star - v_pol) <= eps


def test_evaluate_policy_matches_linear_solve(k5):
    table, nt = k5
    pol = greedy_policy(table)
    P, r = dense(nt, pol.rows)
    exact = np.linalg.solve(np.eye(nt.n_states) - nt.gamma * P, r)
    v = evaluate_policy(normalize(table, solver_params(table, epsilon_user=1e-8)), pol)
    assert np.max(np.abs(v - exact)) < 1e-6


def test_random_policies_are_dominated(k5, k5_exact):
    table, nt = k5
    v_star, _ = k5_exact
    rng = np.random.default_rng(7)
    for _ in range(100):
        rows = np.array([rng.integers(nt.state_ptr[s], nt.state_ptr[s + 1])
                         for s in range(nt.n_states)])
        P, r = dense(nt, rows)
        v = np.linalg.solve(np.eye(nt.n_states) - nt.gamma * P, r)
        assert np.all(v <= v_star + 1e-9)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(0.01, 100.0))
def test_reward_scaling(k5, k5_exact, scale):
    _, nt = k5
    v_star, rows = k5_exact
    scaled = dataclasses.replace(nt, reward=nt.reward * scale)
    v, _ = bellman_operator(scaled, v_star * scale)
    np.testing.assert_allclose(v, v_star * scale, rtol=1e-9, atol=1e-9 * scale)


def test_greedy_examples():
    table = build_table(SystemConfig(k_max=12))
    g = greedy_policy(table)
    act = lambda m, occ: g.actions[table.index[SystemState(m, occ, ARRIVAL)]]
    assert act(10, (1, 1, 1)) == 3
    assert act(5, (2, 1, 0)) == 1
    assert act(3, (3, 0, 0)) == DROP
    assert act(5, (1, 1, 0)) == 2
    non_arrival = table.event_kind != 0
    assert np.all(g.actions[non_arrival] == NO_ACTION)


def test_optimal_policy_non_arrival_rows(k5):
    table, nt = k5
    v, _, _ = value_iteration(nt)
    pol = extract_policy(nt, v)
    assert np.all(pol.actions[table.event_kind != 0] == NO_ACTION)


def test_normalisation_rows_are_stochastic(k5):
    _, nt = k5
    sums = np.add.reduceat(nt.probs, nt.row_ptr[:-1])
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)
    assert np.all(nt.probs >= 0)


def test_normalisation_without_self_loop_keeps_probabilities(k5):
    table, _ = k5
    r = int(np.argmax(table.sigma))
    nt = normalize(table, SolverParams(0.1, 10.0, float(table.sigma[r])))
    lo, hi = nt.row_ptr[r], nt.row_ptr[r + 1]
    np.testing.assert_allclose(np.sort(nt.probs[lo:hi]),
                               np.sort(table.succ_prob[table.succ_ptr[r]:table.succ_ptr[r + 1]]))
    assert nt.reward[r] == pytest.approx(table.reward[r])


def test_uniformization_rate_bounds_sigma(k5):
    table, _ = k5
    assert uniformization_rate(table) >= table.sigma.max()


def test_rate_below_sigma_is_rejected(k5):
    table, _ = k5
    with pytest.raises(UniformizationError, match="action"):
        normalize(table, SolverParams(0.1, 10.0, float(table.sigma.max()) * 0.5))


def test_iteration_cap(k5):
    table, _ = k5
    nt = normalize(table, solver_params(table, epsilon_user=1e-9, max_iterations=3))
    with pytest.raises(ConvergenceError, match="did not converge"):
        value_iteration(nt)


def test_policy_constructors_agree(k5):
    table, _ = k5
    g = greedy_policy(table)
    again = Policy.from_actions(table, g.actions)
    assert np.array_equal(again.rows, g.rows)
    with pytest.raises(ValueError):
        Policy.from_rows(table, g.rows[::-1])


def test_report_lists_every_state(k5):
    table, _ = k5
    res = solve(table)
    buf = io.StringIO()
    write_report(res, table, buf)
    body = [ln for ln in buf.getvalue().splitlines() if not ln.startswith("#")]
    assert body[0] == "state\tvalue\taction"
    assert len(body) == 1 + table.n_states


@pytest.mark.parametrize("change", [dict(occupancy_convention="pre"), dict(idle_rate_fallback="single")])
def test_convention_sensitivity(change):
    base = SystemConfig(k_max=6)
    out = {}
    for name, config in (("default", base), ("alt", dataclasses.replace(base, **change))):
        table = build_table(config)
        nt = normalize(table, solver_params(table))
        v, _, _ = value_iteration(nt)
        opt = extract_policy(nt, v)
        vo, vg = evaluate_policy(nt, opt), evaluate_policy(nt, greedy_policy(table))
        assert np.all(vo >= vg - 1e-9)
        out[name] = (opt.actions, vo[table.empty_state()])
    agree = np.mean(out["default"][0] == out["alt"][0])
    print(f"{change}: policy agreement {agree:.3f}, V(empty) {out['default'][1]:.4f} vs {out['alt'][1]:.4f}")
    assert agree > 0.5

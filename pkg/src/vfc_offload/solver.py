"""Uniformised value iteration over a :class:`~vfc_offload.model.TransitionTable`.

The continuous-time problem is turned into a discrete one by adding fictitious
self-transitions at a common rate ``y`` (no smaller than any holding rate). The
discount per step becomes ``y / (y + alpha)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import DROP, NO_ACTION, EventKind, TransitionTable, action_label

__all__ = [
    "SolverParams",
    "NormalizedTable",
    "Policy",
    "SolveResult",
    "UniformizationError",
    "ConvergenceError",
    "uniformization_rate",
    "solver_params",
    "normalize",
    "value_iteration",
    "bellman_operator",
    "extract_policy",
    "greedy_policy",
    "evaluate_policy",
    "solve",
    "write_report",
]


class UniformizationError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverParams:
    alpha: float
    epsilon_user: float
    y_rate: float
    max_iterations: int = 1_000_000

    def __post_init__(self):
        if not (self.alpha > 0 and self.y_rate > 0 and self.epsilon_user > 0):
            raise ValueError("alpha, y_rate and epsilon_user must be positive")

    @property
    def gamma_hat(self) -> float:
        return self.y_rate / (self.y_rate + self.alpha)

    @property
    def threshold(self) -> float:
        """Sup-norm step below which iteration stops."""
        g = self.gamma_hat
        return self.epsilon_user * (1.0 - g) / (2.0 * g)


def uniformization_rate(table: TransitionTable) -> float:
    """``K * lambda_max + K * N * mu_t + lambda_f + mu_f``.

    ``lambda_max`` is the largest per-vehicle task rate over every population
    and split, which keeps ``y`` above every holding rate in the table.
    """
    c = table.config
    lam = float(table.rates.arrival[1:, 1:].max())
    return c.k_max * lam + c.k_max * c.n_max * c.mu_t + c.lambda_f + c.mu_f


def solver_params(table: TransitionTable, epsilon_user: float | None = None,
                  max_iterations: int = 1_000_000) -> SolverParams:
    c = table.config
    return SolverParams(
        alpha=c.alpha,
        epsilon_user=c.epsilon_user if epsilon_user is None else epsilon_user,
        y_rate=uniformization_rate(table),
        max_iterations=max_iterations,
    )


@dataclass(frozen=True, eq=False)
class NormalizedTable:
    """Discrete-time version of the table; successor blocks include self-loops."""

    table: TransitionTable
    params: SolverParams
    state_ptr: np.ndarray
    reward: np.ndarray
    row_ptr: np.ndarray
    cols: np.ndarray
    probs: np.ndarray

    @property
    def gamma(self) -> float:
        return self.params.gamma_hat

    @property
    def n_states(self) -> int:
        return self.state_ptr.shape[0] - 1

    def restrict(self, rows: np.ndarray) -> "NormalizedTable":
        """Sub-table keeping exactly one row per state (a fixed policy)."""
        rows = np.asarray(rows, dtype=np.int64)
        lengths = self.row_ptr[rows + 1] - self.row_ptr[rows]
        row_ptr = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
        take = np.concatenate([np.arange(self.row_ptr[r], self.row_ptr[r + 1]) for r in rows])
        return NormalizedTable(self.table, self.params,
                               np.arange(self.n_states + 1, dtype=np.int64),
                               self.reward[rows], row_ptr, self.cols[take], self.probs[take])


def normalize(table: TransitionTable, params: SolverParams) -> NormalizedTable:
    y = params.y_rate
    over = np.flatnonzero(table.sigma > y)
    if over.size:
        r = int(over[0])
        s = table.states[table.row_state[r]]
        raise UniformizationError(
            f"uniformization rate {y:g} is below the event rate {table.sigma[r]:g} of "
            f"{s.label()}, action {int(table.action[r])}")
    a = params.alpha
    reward = table.reward * (a + table.sigma) / (a + y)
    row_ptr = [0]
    cols, probs = [], []
    for r in range(table.n_rows):
        s = int(table.row_state[r])
        scale = table.sigma[r] / y
        lo, hi = table.succ_ptr[r], table.succ_ptr[r + 1]
        stay = 0.0
        for j in range(lo, hi):
            t = int(table.succ_index[j])
            if t == s:
                stay = table.succ_prob[j]
                continue
            cols.append(t)
            probs.append(table.succ_prob[j] * scale)
        loop = 1.0 - (1.0 - stay) * scale
        if loop > 0.0:
            cols.append(s)
            probs.append(loop)
        row_ptr.append(len(cols))
    return NormalizedTable(table, params, table.state_ptr, reward, np.asarray(row_ptr, dtype=np.int64),
                           np.asarray(cols, dtype=np.int64), np.asarray(probs))


@dataclass(frozen=True, eq=False)
class Policy:
    """One action (and its table row) per state."""

    actions: np.ndarray
    rows: np.ndarray
    tag: str = "custom"

    @classmethod
    def from_rows(cls, table: TransitionTable, rows, tag: str = "custom") -> "Policy":
        rows = np.asarray(rows, dtype=np.int64)
        if rows.shape != (table.n_states,):
            raise ValueError("need exactly one row per state")
        if np.any(table.row_state[rows] != np.arange(table.n_states)):
            raise ValueError("a policy row belongs to a different state")
        return cls(table.action[rows].copy(), rows, tag)

    @classmethod
    def from_actions(cls, table: TransitionTable, actions, tag: str = "custom") -> "Policy":
        rows = np.empty(table.n_states, dtype=np.int64)
        for s, a in enumerate(actions):
            rows[s] = table.row_of(table.states[s], int(a))
        return cls(np.asarray(actions, dtype=np.int64).copy(), rows, tag)


@dataclass(frozen=True, eq=False)
class SolveResult:
    values: np.ndarray  # per non-terminal state
    policy: Policy
    iterations: int
    delta: float
    params: SolverParams


def _padded(values: np.ndarray) -> np.ndarray:
    return np.append(np.asarray(values, dtype=np.float64), 0.0)


def value_iteration(nt: NormalizedTable, v0: np.ndarray | None = None):
    """Run synchronous sweeps from ``V = 0`` until the stopping threshold.

    Returns ``(values, iterations, final_delta)``.
    """
    p = nt.params
    start = np.zeros(nt.n_states + 1) if v0 is None else _padded(v0)
    v, k, delta, _ = kernels.value_iteration(
        nt.state_ptr, nt.row_ptr, nt.cols, nt.probs, nt.reward, nt.gamma, start,
        p.threshold, p.max_iterations)
    if k < 0:
        raise ConvergenceError(
            f"value iteration did not converge in {p.max_iterations} sweeps "
            f"(last step {delta:.3e}, threshold {p.threshold:.3e})")
    return v[:-1], int(k), float(delta)


def bellman_operator(nt: NormalizedTable, values: np.ndarray):
    """One sweep applied to ``values``: ``(T v, argmax rows)``."""
    out, rows = kernels.bellman_sweep(nt.state_ptr, nt.row_ptr, nt.cols, nt.probs,
                                      nt.reward, nt.gamma, _padded(values))
    return out[:-1], rows


def extract_policy(nt: NormalizedTable, values: np.ndarray) -> Policy:
    """Greedy one-step lookahead on ``values``; ties go to the smallest action."""
    _, rows = bellman_operator(nt, values)
    return Policy.from_rows(nt.table, rows, tag="optimal")


def greedy_policy(table: TransitionTable) -> Policy:
    """Give every arriving task as many RUs as are free (capped at N); drop if none."""
    rows = np.empty(table.n_states, dtype=np.int64)
    for s, state in enumerate(table.states):
        if state.event.kind is EventKind.ARRIVAL:
            a = min(table.config.n_max, state.available_rus)
            a = a if a >= 1 else DROP
        else:
            a = NO_ACTION
        rows[s] = table.row_of(state, a)
    return Policy.from_rows(table, rows, tag="greedy")


def evaluate_policy(nt: NormalizedTable, policy: Policy) -> np.ndarray:
    """Value of a fixed policy, iterated to the same stopping threshold."""
    sub = nt.restrict(policy.rows)
    p = nt.params
    v, k, delta, _ = kernels.value_iteration(
        sub.state_ptr, sub.row_ptr, sub.cols, sub.probs, sub.reward, sub.gamma,
        np.zeros(nt.n_states + 1), p.threshold, p.max_iterations)
    if k < 0:
        raise ConvergenceError(f"policy evaluation did not converge (last step {delta:.3e})")
    return v[:-1]


def solve(table: TransitionTable, epsilon_user: float | None = None,
          max_iterations: int = 1_000_000) -> SolveResult:
    params = solver_params(table, epsilon_user, max_iterations)
    nt = normalize(table, params)
    values, k, delta = value_iteration(nt)
    return SolveResult(values, extract_policy(nt, values), k, delta, params)


def write_report(result: SolveResult, table: TransitionTable, fh) -> None:
    p = result.params
    fh.write(f"# iterations\t{result.iterations}\n")
    fh.write(f"# final_delta\t{result.delta!r}\n")
    fh.write(f"# threshold\t{p.threshold!r}\n")
    fh.write(f"# gamma_hat\t{p.gamma_hat!r}\n")
    fh.write(f"# y\t{p.y_rate!r}\n")
    w = csv.writer(fh, delimiter="\t", lineterminator="\n")
    w.writerow(("state", "value", "action"))
    for s, state in enumerate(table.states):
        w.writerow((state.label(), repr(float(result.values[s])),
                    action_label(int(result.policy.actions[s]))))

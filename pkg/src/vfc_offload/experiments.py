"""Batch experiments over a grid of fleet sizes and service rates, written as CSV."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix, identity
from scipy.sparse.linalg import spsolve

from .dcf import task_transmission_delay_us, task_arrival_rate
from .model import DROP, SystemConfig, TransitionTable, build_table, write_table
from .sim import SIM_COLUMNS, SimConfig, simulate
from .solver import (NormalizedTable, Policy, evaluate_policy, extract_policy, greedy_policy,
                     normalize, solver_params, value_iteration, write_report)

log = logging.getLogger(__name__)

KINDS = ("arrival-rate", "delay", "policy-mix", "reward-compare", "feasibility", "simulate",
         "table", "report")

# long-run improvement of the optimal over the greedy scheme reported for the two service rates
REFERENCE_IMPROVEMENT_PCT = {25.0: 27.74, 50.0: 14.91}


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    k_range: tuple[int, ...] = tuple(range(5, 13))
    mu_t_list: tuple[float, ...] = (25.0, 50.0)
    output_dir: Path = Path("results")
    base: SystemConfig = field(default_factory=SystemConfig)
    seed: int = 0
    replications: int = 1000
    horizon_discount_floor: float = 1e-6
    delay_limit_ms: float = 100.0
    scan_ceiling: int | None = None  # feasibility scan stops here; defaults to max(k_range)
    max_iterations: int = 1_000_000

    def __post_init__(self):
        kinds = self.kind.split(",") if self.kind != "all" else list(KINDS)
        bad = [k for k in kinds if k not in KINDS]
        if bad:
            raise ValueError(f"unknown experiment kind {bad[0]!r}; expected one of "
                             f"{', '.join(KINDS)} or 'all'")
        if not self.k_range:
            raise ValueError("k_range must not be empty")
        if min(self.k_range) < self.base.n_max:
            raise ValueError(f"every K in k_range must be >= n_max={self.base.n_max}")
        if not self.mu_t_list:
            raise ValueError("mu_t_list must not be empty")

    @property
    def kinds(self) -> list[str]:
        return list(KINDS) if self.kind == "all" else self.kind.split(",")

    def config(self, k: int, mu_t: float) -> SystemConfig:
        return dataclasses.replace(self.base, k_max=k, mu_t=mu_t)


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header, rows) -> Path:
    """Write atomically: temp file in the target directory, then rename."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return _atomic_write(path, buf.getvalue())


def _atomic_write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _mu_tag(mu: float) -> str:
    return f"{mu:g}".replace(".", "p")


# -- individual quantities -------------------------------------------------


def offload_delay_ms(config: SystemConfig, k: int, i: int) -> float:
    """Transmission plus processing delay of one task split over ``i`` RUs among ``k`` vehicles."""
    return task_transmission_delay_us(config.dcf, k, i) / 1e3 + 1e3 * config.processing_delay(i)


def feasibility_bound(config: SystemConfig, mu_t: float, delay_limit_ms: float,
                      ceiling: int) -> tuple[int, bool]:
    """Largest fleet size whose worst-split offload delay meets the limit.

    Scans upward from ``K = n_max``. Returns ``(K, capped)``; ``K = 0`` when even
    ``K = n_max`` misses the limit, ``capped`` when the scan reached ``ceiling``
    without a miss.
    """
    if not delay_limit_ms > 0:
        raise ValueError("delay_limit_ms must be positive")
    cfg = dataclasses.replace(config, mu_t=mu_t, k_max=max(ceiling, config.n_max))
    best = 0
    for k in range(cfg.n_max, ceiling + 1):
        worst = max(offload_delay_ms(cfg, k, i) for i in range(1, cfg.n_max + 1))
        if worst > delay_limit_ms:
            return best, False
        best = k
    if best:
        log.warning("feasibility scan for mu_t=%g hit the ceiling K=%d", mu_t, ceiling)
    return best, best == ceiling


def visit_weights(nt: NormalizedTable, policy: Policy, start: int) -> np.ndarray:
    """Long-run state occupancy of the uniformised chain when every run restarts at ``start``.

    Proportional to the expected number of visits per run before absorption.
    """
    sub = nt.restrict(policy.rows)
    n = sub.n_states
    lengths = np.diff(sub.row_ptr)
    rows = np.repeat(np.arange(n), lengths)
    keep = sub.cols < n
    p = csr_matrix((sub.probs[keep], (rows[keep], sub.cols[keep])), shape=(n, n))
    rhs = np.zeros(n)
    rhs[start] = 1.0
    visits = spsolve((identity(n, format="csc") - p.T).tocsc(), rhs)
    return visits / visits.sum()


def action_mix(table: TransitionTable, policy: Policy, weights: np.ndarray | None = None) -> dict[int, float]:
    """Share of each arrival-time action, optionally weighted per state."""
    arrivals = table.arrival_states()
    w = np.ones(arrivals.size) if weights is None else weights[arrivals]
    total = w.sum()
    acts = policy.actions[arrivals]
    return {a: float(w[acts == a].sum() / total) for a in range(DROP, table.config.n_max + 1)}


@dataclass(frozen=True)
class Comparison:
    k: int
    mu_t: float
    table: TransitionTable
    nt: NormalizedTable
    optimal: Policy
    greedy: Policy
    v_optimal: np.ndarray
    v_greedy: np.ndarray
    iterations: int


def compare(config: SystemConfig, max_iterations: int = 1_000_000) -> Comparison:
    table = build_table(config)
    nt = normalize(table, solver_params(table, max_iterations=max_iterations))
    values, k, _ = value_iteration(nt)
    optimal = extract_policy(nt, values)
    greedy = greedy_policy(table)
    return Comparison(config.k_max, config.mu_t, table, nt, optimal, greedy,
                      evaluate_policy(nt, optimal), evaluate_policy(nt, greedy), k)


def improvement_pct(v_opt: float, v_greedy: float) -> float:
    return 100.0 * (v_opt - v_greedy) / abs(v_greedy)


# -- runner ----------------------------------------------------------------


class _Cache:
    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self._cmp = {}

    def comparison(self, k, mu) -> Comparison:
        key = (k, mu)
        if key not in self._cmp:
            self._cmp[key] = compare(self.spec.config(k, mu), self.spec.max_iterations)
        return self._cmp[key]


def _arrival_rate(spec, cache, out):
    cfg = spec.base
    rows = [(k, i, task_arrival_rate(cfg.dcf, k, i))
            for k in spec.k_range for i in range(1, cfg.n_max + 1)]
    return [write_csv(out / "arrival_rate.csv", ("K", "i", "lambda_t"), rows)]


def _delay(spec, cache, out):
    paths = []
    for mu in spec.mu_t_list:
        cfg = dataclasses.replace(spec.base, mu_t=mu)
        rows = [(k, i, offload_delay_ms(cfg, k, i))
                for k in spec.k_range for i in range(1, cfg.n_max + 1)]
        paths.append(write_csv(out / f"delay_mu{_mu_tag(mu)}.csv", ("K", "i", "delay_ms"), rows))
    return paths


def _policy_mix(spec, cache, out):
    paths = []
    header = ("K", "action", "probability")
    for mu in spec.mu_t_list:
        weighted, plain = [], []
        for k in spec.k_range:
            c = cache.comparison(k, mu)
            w = visit_weights(c.nt, c.optimal, c.table.empty_state())
            weighted += [(k, a, p) for a, p in action_mix(c.table, c.optimal, w).items()]
            plain += [(k, a, p) for a, p in action_mix(c.table, c.optimal).items()]
        paths.append(write_csv(out / f"policy_mix_mu{_mu_tag(mu)}.csv", header, weighted))
        paths.append(write_csv(out / f"policy_mix_unweighted_mu{_mu_tag(mu)}.csv", header, plain))
    return paths


def _reward_compare(spec, cache, out):
    paths = []
    header = ("K", "V_optimal", "V_greedy", "improvement_pct")
    summary = []
    for mu in spec.mu_t_list:
        mean_rows, empty_rows = [], []
        for k in spec.k_range:
            c = cache.comparison(k, mu)
            arr = c.table.arrival_states()
            vo, vg = float(c.v_optimal[arr].mean()), float(c.v_greedy[arr].mean())
            mean_rows.append((k, vo, vg, improvement_pct(vo, vg)))
            s0 = c.table.empty_state()
            eo, eg = float(c.v_optimal[s0]), float(c.v_greedy[s0])
            empty_rows.append((k, eo, eg, improvement_pct(eo, eg)))
        paths.append(write_csv(out / f"reward_compare_mu{_mu_tag(mu)}.csv", header, mean_rows))
        paths.append(write_csv(out / f"reward_compare_empty_mu{_mu_tag(mu)}.csv", header, empty_rows))
        ref = REFERENCE_IMPROVEMENT_PCT.get(float(mu), "")
        for name, rows in (("arrival-mean", mean_rows), ("empty-state", empty_rows)):
            summary.append((mu, name, float(np.mean([r[3] for r in rows])), ref))
    paths.append(write_csv(out / "reward_summary.csv",
                           ("mu_t", "aggregation", "mean_improvement_pct", "reference_pct"), summary))
    return paths


def _feasibility(spec, cache, out):
    ceiling = spec.scan_ceiling or max(spec.k_range)
    rows = [(mu, feasibility_bound(spec.base, mu, spec.delay_limit_ms, ceiling)[0])
            for mu in spec.mu_t_list]
    return [write_csv(out / "feasibility.csv", ("mu_t", "max_K_meeting_100ms"), rows)]


def _simulate(spec, cache, out):
    paths = []
    summary = []
    sim = SimConfig(seed=spec.seed, replications=spec.replications,
                    horizon_discount_floor=spec.horizon_discount_floor)
    for mu in spec.mu_t_list:
        for k in spec.k_range:
            c = cache.comparison(k, mu)
            s0 = c.table.empty_state()
            for pol, v in ((c.optimal, c.v_optimal), (c.greedy, c.v_greedy)):
                res = simulate(c.table, pol, sim)
                rows = zip(range(res.replications), res.rewards, res.epochs, res.drops,
                           res.interruptions)
                paths.append(write_csv(out / f"simulate_mu{_mu_tag(mu)}_K{k}_{pol.tag}.csv",
                                       SIM_COLUMNS, rows))
                summary.append((mu, k, pol.tag, res.mean_discounted_reward, res.std_error,
                                res.replications, res.drop_rate, res.interruption_rate, float(v[s0])))
    paths.append(write_csv(out / "simulate_summary.csv",
                           ("mu_t", "K", "policy", "mean_discounted_reward", "std_error",
                            "replications", "drop_rate", "interruption_rate", "solver_value"),
                           summary))
    return paths


def _table(spec, cache, out):
    paths = []
    for mu in spec.mu_t_list:
        for k in spec.k_range:
            buf = io.StringIO()
            write_table(cache.comparison(k, mu).table, buf)
            paths.append(_atomic_write(out / f"transition_table_mu{_mu_tag(mu)}_K{k}.tsv",
                                       buf.getvalue()))
    return paths


def _report(spec, cache, out):
    from .solver import SolveResult

    paths = []
    for mu in spec.mu_t_list:
        for k in spec.k_range:
            c = cache.comparison(k, mu)
            values, iters, delta = value_iteration(c.nt)
            buf = io.StringIO()
            write_report(SolveResult(values, c.optimal, iters, delta, c.nt.params), c.table, buf)
            paths.append(_atomic_write(out / f"solver_report_mu{_mu_tag(mu)}_K{k}.tsv",
                                       buf.getvalue()))
    return paths


_RUNNERS = {
    "arrival-rate": _arrival_rate,
    "delay": _delay,
    "policy-mix": _policy_mix,
    "reward-compare": _reward_compare,
    "feasibility": _feasibility,
    "simulate": _simulate,
    "table": _table,
    "report": _report,
}


def run(spec: ExperimentSpec) -> list[Path]:
    """Run every requested experiment and return the files written."""
    out = Path(spec.output_dir)
    cache = _Cache(spec)
    paths = []
    for kind in spec.kinds:
        log.info("running %s", kind)
        paths += _RUNNERS[kind](spec, cache, out)
    return paths

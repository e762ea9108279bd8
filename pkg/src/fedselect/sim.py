"""Synchronous simulation of the price-signal protocol.

Round ``k`` (``k = 0 .. steps - 1``):

1. every client sees ``theta(k)`` and its own ``x_i(k)`` and draws ``X_i(k+1)``;
2. the server computes ``theta(k+1) = clamp(theta(k) - tau * (sum_i X_i(k) - C))``
   from the aggregate it collected at the previous barrier.

Row ``k + 1`` of the trace holds the state at time ``k + 1``: the new price,
the new aggregate participation, the new sum of averages, and the budget spent
producing ``X(k+1)``.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .cost import FAMILIES, CostSpec, CostTable, sample_cost_population
from .privacy import PrivacyLedger, average_unsaturated, epsilon_array
from .protocol import DEFAULT_THETA_MAX, DEFAULT_THETA_MIN, clamp_theta, rr_probability, sigma_array
from .rng import stream_keys, uniforms_at
from .solver import AllocationResult, solve_optimal

log = logging.getLogger(__name__)

THREADS_ENV = "FEDSELECT_THREADS"
MODES = ("classical", "dp")
BASELINES = ("exact", "classical")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    n_clients: int = 1200
    capacity: float = 600.0
    tau: float = 0.0075
    steps: int = 10_000
    mode: str = "dp"
    beta: float | tuple[float, ...] = 3.5
    master_seed: int = 0
    cost_seed: int = 0
    theta0: float = 1.0
    theta_min: float = DEFAULT_THETA_MIN
    theta_max: float = DEFAULT_THETA_MAX
    trace_thinning: int = 0
    families: tuple[str, ...] = FAMILIES
    a_range: tuple[float, float] = (0.0, 40.0)
    b_range: tuple[float, float] = (0.0, 40.0)
    baseline: str = "exact"
    burn_in_frac: float = 0.1
    # replaces every client's flip probability when set; 0 reduces dp to classical
    p_override: float | None = None
    threads: int | None = None

    def validate(self) -> None:
        if self.n_clients < 1:
            raise ConfigError("n_clients must be >= 1")
        if not 0 < self.capacity < self.n_clients:
            raise ConfigError("capacity must lie in (0, n_clients)")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"baseline must be one of {BASELINES}")
        if not 0 < self.theta_min <= self.theta0 <= self.theta_max:
            raise ConfigError("need 0 < theta_min <= theta0 <= theta_max")
        if self.trace_thinning < 0:
            raise ConfigError("trace_thinning must be >= 0")
        if not 0 <= self.burn_in_frac < 1:
            raise ConfigError("burn_in_frac must lie in [0, 1)")
        if not self.families or any(f not in FAMILIES for f in self.families):
            raise ConfigError(f"families must be drawn from {FAMILIES}")
        betas = self.betas()
        if self.mode == "dp" and np.any(betas <= 0):
            raise ConfigError("beta must be positive")
        if self.p_override is not None and not 0 <= self.p_override < 1:
            raise ConfigError("p_override must lie in [0, 1)")

    def betas(self) -> np.ndarray:
        if isinstance(self.beta, (tuple, list)):
            b = np.asarray(self.beta, dtype=float)
            if b.shape != (self.n_clients,):
                raise ConfigError("per-client beta list must have n_clients entries")
            return b
        return np.full(self.n_clients, float(self.beta))

    def flip_probabilities(self) -> np.ndarray:
        if self.mode == "classical":
            return np.zeros(self.n_clients)
        if self.p_override is not None:
            return np.full(self.n_clients, float(self.p_override))
        return np.array([rr_probability(b) for b in self.betas()])

    def population(self) -> list[CostSpec]:
        return sample_cost_population(
            self.n_clients, self.cost_seed, self.families, self.a_range, self.b_range
        )

    def worker_count(self) -> int:
        n = self.threads
        if n is None:
            n = int(os.environ.get(THREADS_ENV, "0") or 0)
        if n <= 0:
            n = 1 if self.n_clients < 20_000 else (os.cpu_count() or 1)
        return max(1, min(n, self.n_clients))


@dataclass
class SimTrace:
    config: ExperimentConfig
    step: np.ndarray
    theta: np.ndarray
    sum_X: np.ndarray
    sum_x: np.ndarray
    avg_eps: np.ndarray
    saturation_count: np.ndarray
    cost_gap: np.ndarray
    x_final: np.ndarray
    x_star: np.ndarray
    beta: np.ndarray
    eps_final: np.ndarray
    eps_mean: np.ndarray
    eps_max: np.ndarray
    client_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    client_x: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    ledger: PrivacyLedger | None = None

    @property
    def n_clients(self) -> int:
        return len(self.x_final)

    def aggregate_rows(self) -> list[tuple]:
        return list(
            zip(
                self.step.tolist(),
                self.theta.tolist(),
                self.sum_X.tolist(),
                self.sum_x.tolist(),
                self.avg_eps.tolist(),
                self.saturation_count.tolist(),
                self.cost_gap.tolist(),
            )
        )


def _client_block(theta, x, table, keys, p, k, dp):
    sigma, sat = sigma_array(theta, x, table)
    bit = uniforms_at(keys, 2 * k) < sigma
    if dp:
        bit |= uniforms_at(keys, 2 * k + 1) < p
        eps = epsilon_array(sigma, p)
        eps[sat] = np.inf
    else:
        eps = None
    return bit, sat, eps


def _baseline(config: ExperimentConfig, specs: Sequence[CostSpec]) -> np.ndarray:
    if config.baseline == "exact":
        return solve_optimal(specs, config.capacity).x_star
    ref = run_experiment(replace(config, mode="classical", baseline="exact"), specs=specs)
    return ref.x_final


def run_experiment(
    config: ExperimentConfig,
    specs: Sequence[CostSpec] | None = None,
    x_star: np.ndarray | None = None,
) -> SimTrace:
    config.validate()
    if specs is None:
        specs = config.population()
    if len(specs) != config.n_clients:
        raise ConfigError("population size does not match n_clients")
    if x_star is None:
        x_star = _baseline(config, specs)

    n, K = config.n_clients, config.steps
    dp = config.mode == "dp"
    table = CostTable(specs)
    keys = stream_keys(config.master_seed, n)
    p = config.flip_probabilities()
    f_star = float(np.sum(table.value(x_star)))

    workers = config.worker_count()
    bounds = np.linspace(0, n, workers + 1).astype(int)
    blocks = [slice(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    sub_tables = [table.subset(s) for s in blocks]
    pool = ThreadPoolExecutor(max_workers=workers) if len(blocks) > 1 else None
    log.debug("running %s mode, N=%d, K=%d, workers=%d", config.mode, n, K, len(blocks))

    theta_s = np.empty(K)
    sum_X_s = np.empty(K, dtype=np.int64)
    sum_x_s = np.empty(K)
    avg_eps_s = np.full(K, np.nan)
    sat_s = np.empty(K, dtype=np.int64)
    gap_s = np.empty(K)

    m = config.trace_thinning
    client_steps: list[int] = []
    client_x: list[np.ndarray] = []
    ledger = PrivacyLedger(n) if dp else None

    ones = np.ones(n, dtype=np.int64)
    theta = config.theta0
    prev_total = n  # X_i(0) = 1 for every client
    try:
        for k in range(K):
            x = ones / (k + 1)
            if pool is None:
                bit, sat, eps = _client_block(theta, x, table, keys, p, k, dp)
            else:
                futs = [
                    pool.submit(_client_block, theta, x[s], t, keys[s], p[s], k, dp)
                    for s, t in zip(blocks, sub_tables)
                ]
                parts = [f.result() for f in futs]
                bit = np.concatenate([r[0] for r in parts])
                sat = np.concatenate([r[1] for r in parts])
                eps = np.concatenate([r[2] for r in parts]) if dp else None
            ones += bit
            theta = clamp_theta(
                theta - config.tau * (prev_total - config.capacity), config.theta_min, config.theta_max
            )
            prev_total = int(np.count_nonzero(bit))
            x_new = ones / (k + 2)

            theta_s[k] = theta
            sum_X_s[k] = prev_total
            sum_x_s[k] = float(np.sum(x_new))
            sat_s[k] = int(np.count_nonzero(sat))
            gap_s[k] = abs(float(np.sum(table.value(x_new))) - f_star)
            keep = m > 0 and (k + 1) % m == 0
            if dp:
                avg_eps_s[k] = average_unsaturated(eps)[0]
                ledger.record(k + 1, eps, keep=keep)
            if keep:
                client_steps.append(k + 1)
                client_x.append(x_new.copy())
    finally:
        if pool is not None:
            pool.shutdown()

    x_final = ones / (K + 1)
    if dp:
        eps_final, eps_mean, eps_max = ledger.eps_last, ledger.eps_mean, ledger.eps_max
    else:
        eps_final = eps_mean = eps_max = np.full(n, np.nan)
    return SimTrace(
        config=config,
        step=np.arange(1, K + 1),
        theta=theta_s,
        sum_X=sum_X_s,
        sum_x=sum_x_s,
        avg_eps=avg_eps_s,
        saturation_count=sat_s,
        cost_gap=gap_s,
        x_final=x_final,
        x_star=np.asarray(x_star, dtype=float),
        beta=config.betas(),
        eps_final=eps_final,
        eps_mean=eps_mean,
        eps_max=eps_max,
        client_steps=np.array(client_steps, dtype=np.int64),
        client_x=np.array(client_x).reshape(len(client_x), n),
        ledger=ledger,
    )


def burn_in_steps(trace: SimTrace) -> int:
    return int(math.floor(trace.config.burn_in_frac * trace.config.steps))


def error_to_optimum(
    trace: SimTrace, result: AllocationResult | np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """|x_i(k) - x_i*| at the recorded steps past burn-in.

    Returns ``(steps, errors)`` with ``errors[r, i]`` for recorded step
    ``steps[r]``. The final step is always included.
    """
    if result is None:
        x_star = trace.x_star
    elif isinstance(result, AllocationResult):
        x_star = result.x_star
    else:
        x_star = np.asarray(result, dtype=float)
    if x_star.shape != (trace.n_clients,):
        raise ValueError(f"x* has {x_star.size} entries, trace has {trace.n_clients} clients")
    steps = trace.client_steps
    xs = trace.client_x
    if len(steps) == 0 or steps[-1] != trace.config.steps:
        steps = np.append(steps, trace.config.steps)
        xs = np.vstack([xs.reshape(-1, trace.n_clients), trace.x_final])
    keep = steps > burn_in_steps(trace)
    return steps[keep], np.abs(xs[keep] - x_star)


def terminal_error(trace: SimTrace) -> np.ndarray:
    return np.abs(trace.x_final - trace.x_star)


def beta_sweep(
    base: ExperimentConfig, betas: Sequence[float], specs: Sequence[CostSpec] | None = None
) -> list[tuple[float, SimTrace]]:
    if len(betas) == 0:
        raise ConfigError("betas must be non-empty")
    base = replace(base, mode="dp")
    if specs is None:
        specs = base.population()
    x_star = _baseline(base, specs)
    return [
        (float(b), run_experiment(replace(base, beta=float(b)), specs=specs, x_star=x_star))
        for b in betas
    ]


def participation_histogram(
    trace: SimTrace, window: int, bin_width: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Counts of sum_X over the trailing ``window`` steps.

    Returns ``(bin_starts, counts)``; bin ``j`` covers
    ``[bin_starts[j], bin_starts[j] + bin_width)``.
    """
    if not 1 <= window <= len(trace.sum_X):
        raise ValueError(f"window must lie in [1, {len(trace.sum_X)}]")
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    tail = trace.sum_X[-window:] // bin_width
    lo, hi = int(tail.min()), int(tail.max())
    counts = np.bincount(tail - lo, minlength=hi - lo + 1)
    return (np.arange(lo, hi + 1) * bin_width), counts


def histogram_mode(trace: SimTrace, window: int, bin_width: int = 1) -> float:
    """Center of the most populated bin (lowest one on ties)."""
    starts, counts = participation_histogram(trace, window, bin_width)
    j = int(np.argmax(counts))
    return float(starts[j] + (bin_width - 1) / 2)

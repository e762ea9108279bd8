"""Privacy accounting for the randomized-response client.

Per step, a client whose intent coin has bias ``sigma`` and whose flip coin
has bias ``p`` leaks at most

    eps = ln((sigma + (1 - sigma) * p) / ((1 - sigma) * p))

i.e. the log-ratio between reporting 1 at all and reporting 1 through the
flip branch. At ``sigma >= 1`` the ratio is unbounded; such steps are
recorded as saturated with ``eps = inf`` and left out of network averages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


def epsilon_step(sigma: float, p: float) -> float:
    if p <= 0 or p >= 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if sigma >= 1:
        return math.inf
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    return math.log1p(sigma / ((1.0 - sigma) * p))


def epsilon_closed_form(theta: float, x: float, f_prime: float, beta: float) -> float:
    """Budget written in terms of the price, the average and the marginal cost."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    signal = theta * x
    if f_prime <= signal:
        return math.inf
    num = signal * (2.0 * math.exp(beta) - beta) + beta * f_prime
    den = (f_prime - signal) * beta
    return math.log(num / den)


def epsilon_array(sigma: np.ndarray, p: np.ndarray | float) -> np.ndarray:
    """Vectorized :func:`epsilon_step`; ``inf`` where sigma >= 1 or p == 0."""
    sigma = np.asarray(sigma, dtype=float)
    p = np.broadcast_to(np.asarray(p, dtype=float), sigma.shape)
    out = np.full(sigma.shape, np.inf)
    ok = (sigma < 1.0) & (p > 0)
    out[ok] = np.log1p(sigma[ok] / ((1.0 - sigma[ok]) * p[ok]))
    # no signal, no leak, whatever p is
    out[sigma == 0] = 0.0
    return out


def compose_sequential(eps_list: Iterable[float]) -> float:
    total = 0.0
    for e in eps_list:
        if e < 0:
            raise ValueError("budgets are nonnegative")
        total += e
    return total


def network_average_epsilon(eps_by_client: Sequence[float]) -> float:
    if len(eps_by_client) == 0:
        raise ValueError("need at least one client")
    return math.fsum(eps_by_client) / len(eps_by_client)


def empirical_epsilon(sigma: float, p: float, trials: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo estimate of the per-step budget and its delta-method stderr.

    Simulates the two-coin branch ``trials`` times and estimates
    A = P(report 1) and B = P(report 1 and intent 0); returns ln(A/B).
    """
    if trials < 10_000:
        raise ValueError("use at least 10^4 trials")
    if not (0 <= sigma < 1 and 0 < p < 1):
        raise ValueError("need 0 <= sigma < 1 and 0 < p < 1")
    rng = np.random.default_rng(seed)
    intent = rng.random(trials) < sigma
    flip = rng.random(trials) < p
    n_intent = int(np.count_nonzero(intent))
    n_flip = int(np.count_nonzero(~intent & flip))
    if n_flip == 0:
        raise RuntimeError("no flip-branch reports observed; increase trials")
    pi1 = n_intent / trials
    pi2 = n_flip / trials
    eps_hat = math.log((n_intent + n_flip) / n_flip)
    stderr = math.sqrt(pi1 / ((pi1 + pi2) * pi2 * trials))
    return eps_hat, stderr


@dataclass
class PrivacyLedger:
    """Per-client budgets over time.

    Running summaries (last, sum, max over finite steps; saturation counts)
    are always kept. Full per-step series, and the steps at which each client
    saturated, are kept only for steps passed with ``keep=True`` to bound
    memory on long runs.
    """

    n_clients: int
    series_steps: list[int] = field(default_factory=list)
    series: list[np.ndarray] = field(default_factory=list)
    saturated_steps: dict[int, list[int]] = field(default_factory=dict)
    last_step: int = -1

    def __post_init__(self) -> None:
        n = self.n_clients
        self.eps_last = np.full(n, np.nan)
        self.eps_sum = np.zeros(n)
        self.eps_max = np.zeros(n)
        self.finite_count = np.zeros(n, dtype=np.int64)
        self.saturation_count = np.zeros(n, dtype=np.int64)

    def record(self, step: int, eps: np.ndarray, keep: bool = False) -> None:
        if step <= self.last_step:
            raise ValueError(f"step {step} not after {self.last_step}")
        eps = np.asarray(eps, dtype=float)
        if eps.shape != (self.n_clients,):
            raise ValueError("one budget per client expected")
        if np.any(eps < 0):
            raise ValueError("budgets are nonnegative")
        self.last_step = step
        finite = np.isfinite(eps)
        self.eps_last = eps.copy()
        self.eps_sum[finite] += eps[finite]
        np.maximum(self.eps_max, np.where(finite, eps, 0.0), out=self.eps_max)
        self.finite_count += finite
        self.saturation_count += ~finite
        if keep:
            for i in np.flatnonzero(~finite):
                self.saturated_steps.setdefault(int(i), []).append(step)
            self.series_steps.append(step)
            self.series.append(eps.copy())

    @property
    def eps_mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.finite_count > 0, self.eps_sum / np.maximum(self.finite_count, 1), np.nan)

    def client_series(self, i: int) -> list[tuple[int, float]]:
        return [(s, float(e[i])) for s, e in zip(self.series_steps, self.series)]

    def time_composed(self) -> np.ndarray:
        """Per-client sum over recorded steps; a worst-case sequential bound."""
        return np.where(self.saturation_count > 0, np.inf, self.eps_sum)


def average_unsaturated(eps: np.ndarray) -> tuple[float, int]:
    """Network average over finite budgets and the number of saturated clients."""
    finite = np.isfinite(eps)
    n_sat = int(eps.size - np.count_nonzero(finite))
    if n_sat == eps.size:
        return math.nan, n_sat
    return float(np.mean(eps[finite])), n_sat

"""Server and client state machines of the price-signal protocol.

The server nudges a scalar price ``theta`` against the gap between observed
participation and capacity. Each client answers with a Bernoulli intent whose
probability is ``theta * x / f'(x)``, where ``x`` is its own running average
participation. The private client additionally turns a 0-intent into a
reported 1 with probability ``p = (beta / 2) * exp(-beta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .cost import CostSpec, CostTable, eval_derivative
from .rng import ClientStream

DEFAULT_THETA_MIN = 1e-6
DEFAULT_THETA_MAX = 1e6


@dataclass(frozen=True)
class ServerState:
    theta: float
    tau: float
    capacity: float
    theta_min: float = DEFAULT_THETA_MIN
    theta_max: float = DEFAULT_THETA_MAX

    def __post_init__(self) -> None:
        if not 0 < self.theta_min <= self.theta_max:
            raise ValueError("need 0 < theta_min <= theta_max")
        if not self.theta_min <= self.theta <= self.theta_max:
            raise ValueError(f"theta {self.theta} outside [{self.theta_min}, {self.theta_max}]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")


def clamp_theta(raw: float, theta_min: float, theta_max: float) -> float:
    return min(theta_max, max(theta_min, raw))


def server_update(state: ServerState, total_participation: int) -> ServerState:
    if total_participation < 0:
        raise ValueError("total participation cannot be negative")
    raw = state.theta - state.tau * (total_participation - state.capacity)
    return replace(state, theta=clamp_theta(raw, state.theta_min, state.theta_max))


def rr_probability(beta: float) -> float:
    """Probability that a private client reports 1 after a 0-intent."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    return 0.5 * beta * math.exp(-beta)


def raw_sigma(theta: float, x: float, spec: CostSpec) -> float:
    if x <= 0:
        raise ValueError("average participation must be positive")
    fp = eval_derivative(spec, x)
    if fp <= 0:
        return math.inf
    return theta * x / fp


def response_probability(theta: float, x: float, spec: CostSpec) -> float:
    return min(1.0, max(0.0, raw_sigma(theta, x, spec)))


@dataclass
class ClientState:
    """Protocol state of one client.

    ``ones`` counts the 1s in the participation history since joining, so the
    running average is recomputed as ``ones / (step - joined + 1)`` rather than
    accumulated, and matches the history mean exactly.
    """

    rng: ClientStream
    beta: float = 1.0
    step: int = 0
    joined: int = 0
    participating: int = 1
    ones: int = 1

    @classmethod
    def join(cls, master_seed: int, index: int, beta: float = 1.0, step: int = 0) -> ClientState:
        """Fresh client entering at ``step`` with X = 1 and x = 1."""
        return cls(rng=ClientStream(master_seed, index), beta=beta, step=step, joined=step)

    @property
    def avg_participation(self) -> float:
        return self.ones / (self.step - self.joined + 1)

    def _advance(self, bit: int) -> ClientState:
        return replace(self, step=self.step + 1, participating=bit, ones=self.ones + bit)


@dataclass(frozen=True)
class StepOutcome:
    sigma: float
    p: float
    b: int
    b_prime: int | None
    participating: int
    saturated: bool


def classical_client_step(client: ClientState, theta: float, spec: CostSpec) -> ClientState:
    sigma = response_probability(theta, client.avg_participation, spec)
    b = int(client.rng.uniform(2 * client.step) < sigma)
    return client._advance(b)


def dp_client_step(
    client: ClientState, theta: float, spec: CostSpec, p: float | None = None
) -> tuple[ClientState, StepOutcome]:
    """Private client step; ``p`` overrides the beta-derived flip probability."""
    raw = raw_sigma(theta, client.avg_participation, spec)
    sigma = min(1.0, max(0.0, raw))
    if p is None:
        p = rr_probability(client.beta)
    b = int(client.rng.uniform(2 * client.step) < sigma)
    if b:
        b_prime = None
        bit = 1
    else:
        b_prime = int(client.rng.uniform(2 * client.step + 1) < p)
        bit = b_prime
    outcome = StepOutcome(sigma=sigma, p=p, b=b, b_prime=b_prime, participating=bit, saturated=raw >= 1.0)
    return client._advance(bit), outcome


def aggregate_participation(clients: Iterable[ClientState]) -> int:
    return sum(c.participating for c in clients)


def recommend_tau(specs: Sequence[CostSpec], x_floor: float, grid: int = 1001) -> float:
    """Safe gain: 0.9 over the summed worst-case x / f'(x) on [x_floor, 1]."""
    if not 0 < x_floor <= 1:
        raise ValueError("x_floor must lie in (0, 1]")
    xs = np.linspace(x_floor, 1.0, grid)
    total = 0.0
    for spec in specs:
        fp = sum(c * e * xs ** (e - 1) for c, e in spec.terms)
        if np.any(fp <= 0):
            raise ValueError("x / f'(x) is unbounded on the grid")
        total += float(np.max(xs / fp))
    return 0.9 / total


# Vectorized counterparts used by the simulator. These consume the same
# per-client uniforms as the scalar functions above.


def sigma_array(theta: float, x: np.ndarray, table: CostTable) -> tuple[np.ndarray, np.ndarray]:
    """Clamped response probabilities and the saturation mask."""
    fp = table.derivative(x)
    with np.errstate(divide="ignore"):
        raw = np.where(fp > 0, theta * x / fp, np.inf)
    return np.clip(raw, 0.0, 1.0), raw >= 1.0

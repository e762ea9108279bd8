"""Client cost functions.

Costs are positive-coefficient polynomials with even exponents on [0, 1]:

    f(x) = sum_j c_j * x**e_j,   c_j > 0, e_j in {2, 4, 6, ...}

Every member of this family is smooth, strictly convex and strictly increasing
on (0, 1], with f(0) = f'(0) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

FAMILIES = ("i", "ii", "iii", "iv")


class DomainError(ValueError):
    """Argument outside the unit interval."""


@dataclass(frozen=True)
class CostSpec:
    terms: tuple[tuple[float, int], ...]
    family: str | None = None

    def __post_init__(self) -> None:
        terms = tuple((float(c), int(e)) for c, e in self.terms)
        if not terms:
            raise ValueError("cost needs at least one term")
        for c, e in terms:
            if not (c > 0 and np.isfinite(c)):
                raise ValueError(f"coefficient must be positive and finite, got {c}")
            if e < 2 or e % 2:
                raise ValueError(f"exponent must be an even integer >= 2, got {e}")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def quadratic(cls, a: float) -> CostSpec:
        return cls(((a, 2),), family="i")

    def __call__(self, x: float) -> float:
        return eval_cost(self, x)

    def derivative(self, x: float) -> float:
        return eval_derivative(self, x)

    def third_derivative_bound(self) -> float:
        """Upper bound of |f'''| on [0, 1]."""
        return sum(c * e * (e - 1) * (e - 2) for c, e in self.terms)


def _check_domain(x: float) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    return x


def eval_cost(spec: CostSpec, x: float) -> float:
    x = _check_domain(x)
    return sum(c * x**e for c, e in spec.terms)


def eval_derivative(spec: CostSpec, x: float) -> float:
    x = _check_domain(x)
    return sum(c * e * x ** (e - 1) for c, e in spec.terms)


def family_spec(family: str, a: float, b: float) -> CostSpec:
    """Build one of the four experimental cost families from draws ``a``, ``b``."""
    if family == "i":
        terms = ((a, 2),)
    elif family == "ii":
        terms = ((0.5 * a, 4),)
    elif family == "iii":
        terms = ((a / 3.0, 4), (b, 6))
    elif family == "iv":
        terms = ((b, 2),)
    else:
        raise ValueError(f"unknown cost family {family!r}")
    return CostSpec(terms, family=family)


def _open_uniform(rng: np.random.Generator, low: float, high: float, n: int) -> np.ndarray:
    out = rng.uniform(low, high, size=n)
    # Generator.uniform is half-open [low, high); redraw exact lower endpoints
    bad = out <= low
    while bad.any():
        out[bad] = rng.uniform(low, high, size=int(bad.sum()))
        bad = out <= low
    return out


def sample_cost_population(
    n: int,
    seed: int,
    families: Sequence[str] = FAMILIES,
    a_range: tuple[float, float] = (0.0, 40.0),
    b_range: tuple[float, float] = (0.0, 40.0),
) -> list[CostSpec]:
    """Draw ``n`` client costs; client ``i`` gets ``families[i % len(families)]``.

    Both coefficients are drawn for every client (so the stream layout does not
    depend on the family mix) from open uniform intervals.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not families:
        raise ValueError("families must be non-empty")
    rng = np.random.default_rng(seed)
    a = _open_uniform(rng, *a_range, n)
    b = _open_uniform(rng, *b_range, n)
    return [family_spec(families[i % len(families)], a[i], b[i]) for i in range(n)]


class CostTable:
    """Dense coefficient matrix for evaluating many costs at once.

    ``coef[i, j]`` multiplies ``x_i ** exponents[j]``.
    """

    def __init__(self, specs: Iterable[CostSpec]):
        specs = list(specs)
        if not specs:
            raise ValueError("empty population")
        exps = sorted({e for s in specs for _, e in s.terms})
        col = {e: j for j, e in enumerate(exps)}
        coef = np.zeros((len(specs), len(exps)))
        for i, s in enumerate(specs):
            for c, e in s.terms:
                coef[i, col[e]] += c
        self.specs = specs
        self.exponents = np.array(exps, dtype=np.int64)
        self.coef = coef

    def __len__(self) -> int:
        return len(self.specs)

    def subset(self, idx: slice) -> CostTable:
        sub = object.__new__(CostTable)
        sub.specs = self.specs[idx]
        sub.exponents = self.exponents
        sub.coef = self.coef[idx]
        return sub

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for j, e in enumerate(self.exponents):
            out += self.coef[:, j] * x ** int(e)
        return out

    def derivative(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for j, e in enumerate(self.exponents):
            out += (self.coef[:, j] * int(e)) * x ** int(e - 1)
        return out

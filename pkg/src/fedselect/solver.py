"""Exact optimum of the capacity-constrained allocation problem.

    minimize    sum_i f_i(x_i)
    subject to  sum_i x_i = C,  0 <= x_i <= 1

Solved by bisection on the common marginal cost ``lam``: each client's best
response is ``min(1, g_i(lam))`` with ``f_i'(g_i(lam)) = lam``, and the total
response is nondecreasing in ``lam``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cost import CostSpec, CostTable

OUTER_TOL = 1e-10
INNER_TOL = 1e-12
MAX_OUTER = 200


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class AllocationResult:
    x_star: np.ndarray
    lambda_star: float
    residual: float

    def objective(self, specs: Sequence[CostSpec]) -> float:
        return float(np.sum(CostTable(specs).value(self.x_star)))


def best_response(table: CostTable, lam: float, tol: float = INNER_TOL) -> np.ndarray:
    """Vectorized inner bisection for f_i'(g) = lam, clipped to [0, 1]."""
    n = len(table)
    if lam <= 0:
        return np.zeros(n)
    lo = np.zeros(n)
    hi = np.ones(n)
    capped = table.derivative(hi) <= lam
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        below = table.derivative(mid) < lam
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = 0.5 * (lo + hi)
    x[capped] = 1.0
    return x


def solve_optimal(specs: Sequence[CostSpec], capacity: float) -> AllocationResult:
    n = len(specs)
    if not 0 < capacity <= n:
        raise InfeasibleError(f"capacity {capacity} must lie in (0, {n}]")
    table = CostTable(specs)
    lam_lo = 0.0
    lam_hi = float(np.max(table.derivative(np.ones(n))))
    x = best_response(table, lam_hi)
    lam = lam_hi
    if abs(x.sum() - capacity) > OUTER_TOL:
        for _ in range(MAX_OUTER):
            lam = 0.5 * (lam_lo + lam_hi)
            x = best_response(table, lam)
            gap = x.sum() - capacity
            if abs(gap) <= OUTER_TOL or lam_hi - lam_lo <= 4 * np.spacing(lam_hi):
                break
            if gap < 0:
                lam_lo = lam
            else:
                lam_hi = lam
    return AllocationResult(x_star=x, lambda_star=float(lam), residual=float(abs(x.sum() - capacity)))


def kkt_residuals(specs: Sequence[CostSpec], result: AllocationResult) -> np.ndarray:
    """Per-client stationarity violation (0 when satisfied)."""
    fp = CostTable(specs).derivative(result.x_star)
    interior = result.x_star < 1.0
    return np.where(interior, np.abs(fp - result.lambda_star), np.maximum(fp - result.lambda_star, 0.0))


def brute_force_optimal(
    specs: Sequence[CostSpec], capacity: float, grid: int = 201, max_points: int = 10_000_000
) -> AllocationResult:
    """Grid search over points whose coordinate sum is within half a spacing of C.

    Half a spacing keeps the constraint tight enough that the search cannot
    undercut the exact optimum by shaving a full cell off the capacity; every
    constraint value still has at least one admissible point.
    """
    n = len(specs)
    if n > 4 or grid > 201:
        raise ValueError("brute force limited to N <= 4 and grid <= 201")
    if grid ** max(n - 1, 1) * 3 > max_points:
        raise MemoryError("search space exceeds configured bound")
    if not 0 < capacity <= n:
        raise InfeasibleError(f"capacity {capacity} must lie in (0, {n}]")
    table = CostTable(specs)
    h = 1.0 / (grid - 1)
    pts = np.linspace(0.0, 1.0, grid)
    if n == 1:
        cands = pts[np.abs(pts - capacity) <= h / 2 + 1e-12][:, None]
    else:
        head = np.stack(np.meshgrid(*([pts] * (n - 1)), indexing="ij"), axis=-1).reshape(-1, n - 1)
        need = capacity - head.sum(axis=1)
        base = np.rint(need / h).astype(np.int64)
        rows = []
        for off in (-1, 0, 1):
            j = base + off
            ok = (j >= 0) & (j < grid)
            last = pts[np.clip(j, 0, grid - 1)]
            ok &= np.abs(head.sum(axis=1) + last - capacity) <= h / 2 + 1e-12
            rows.append(np.column_stack([head[ok], last[ok]]))
        cands = np.concatenate(rows)
    if len(cands) == 0:
        raise InfeasibleError("no grid point near the constraint")
    obj = np.zeros(len(cands))
    for i in range(n):
        obj += table.subset(slice(i, i + 1)).value(cands[:, i : i + 1])[:, 0]
    best = cands[int(np.argmin(obj))]
    fp = table.derivative(best)
    return AllocationResult(
        x_star=best, lambda_star=float(np.mean(fp)), residual=float(abs(best.sum() - capacity))
    )

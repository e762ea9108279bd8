import numpy as np
import pytest

from fedselect.cost import CostSpec, CostTable, sample_cost_population
from fedselect.solver import (
    InfeasibleError,
    best_response,
    brute_force_optimal,
    kkt_residuals,
    solve_optimal,
)

from .conftest import random_specs


def grid_tolerance(specs, grid):
    """Largest objective change from moving every coordinate by one cell."""
    h = 1.0 / (grid - 1)
    return h * float(np.sum(CostTable(specs).derivative(np.ones(len(specs)))))


def test_quadratic_closed_form(quad3):
    res = solve_optimal(quad3, 1.5)
    lam = 1.5 / (1 / 2 + 1 / 4 + 1 / 8)
    np.testing.assert_allclose(res.x_star, [lam / 2, lam / 4, lam / 8], atol=1e-9)
    np.testing.assert_allclose(res.x_star, [0.857143, 0.428571, 0.214286], atol=1e-6)
    assert res.lambda_star == pytest.approx(1.714286, abs=1e-6)
    assert res.residual <= 1e-9


def test_clipping_active():
    specs = [CostSpec.quadratic(1.0), CostSpec.quadratic(10.0)]
    res = solve_optimal(specs, 1.5)
    np.testing.assert_allclose(res.x_star, [1.0, 0.5], atol=1e-9)
    assert res.lambda_star == pytest.approx(10.0, abs=1e-7)


def test_symmetric():
    specs = [CostSpec(((2.0, 4), (1.0, 6)))] * 6
    res = solve_optimal(specs, 3.0)
    np.testing.assert_allclose(res.x_star, 0.5, atol=1e-10)


@pytest.mark.parametrize("cap", [0.0, -1.0, 3.5])
def test_infeasible(quad3, cap):
    with pytest.raises(InfeasibleError):
        solve_optimal(quad3, cap)


def test_full_capacity(quad3):
    np.testing.assert_array_equal(solve_optimal(quad3, 3.0).x_star, 1.0)


def test_brute_force_examples(quad3):
    bf = brute_force_optimal(quad3, 1.5, grid=201)
    np.testing.assert_allclose(bf.x_star, solve_optimal(quad3, 1.5).x_star, atol=0.005 + 1e-9)
    one = brute_force_optimal([CostSpec.quadratic(3.0)], 0.7, grid=201)
    assert one.x_star[0] == pytest.approx(0.7, abs=1e-12)
    sym = brute_force_optimal([CostSpec.quadratic(2.0)] * 2, 1.0, grid=201)
    np.testing.assert_allclose(sym.x_star, [0.5, 0.5], atol=1e-12)


def test_brute_force_limits(quad3):
    with pytest.raises(ValueError):
        brute_force_optimal(quad3 * 2, 1.0)
    with pytest.raises(MemoryError):
        brute_force_optimal(quad3 + quad3[:1], 1.0, grid=201, max_points=10_000)


def test_oracle_equivalence():
    rng = np.random.default_rng(17)
    for _ in range(50):
        n = int(rng.integers(2, 4))
        specs = random_specs(rng, n)
        cap = float(rng.uniform(0.2, n - 0.2))
        exact = solve_optimal(specs, cap)
        bf = brute_force_optimal(specs, cap, grid=201)
        tol = grid_tolerance(specs, 201)
        assert abs(exact.objective(specs) - bf.objective(specs)) <= tol
        assert np.all(kkt_residuals(specs, exact) <= 1e-8)
        assert exact.residual <= 1e-9
        assert np.all((exact.x_star > 0) & (exact.x_star <= 1))


def test_dual_monotone():
    specs = sample_cost_population(40, seed=4)
    table = CostTable(specs)
    lams = np.linspace(0, 150, 300)
    totals = [best_response(table, lam).sum() for lam in lams]
    assert np.all(np.diff(totals) >= -1e-9)


def test_scaling_invariance():
    specs = sample_cost_population(30, seed=8)
    scaled = [CostSpec(tuple((c * 7.5, e) for c, e in s.terms)) for s in specs]
    a = solve_optimal(specs, 12.0)
    b = solve_optimal(scaled, 12.0)
    np.testing.assert_allclose(a.x_star, b.x_star, atol=1e-8)
    assert b.lambda_star == pytest.approx(7.5 * a.lambda_star, rel=1e-7)


def test_paper_population_kkt():
    specs = sample_cost_population(1200, seed=1)
    res = solve_optimal(specs, 600)
    assert res.residual <= 1e-9
    assert np.all(kkt_residuals(specs, res) <= 1e-8)
    assert np.all(res.x_star > 0)

from dataclasses import replace

import numpy as np
import pytest

from fedselect.cost import CostSpec, sample_cost_population
from fedselect.protocol import ClientState, ServerState, aggregate_participation, classical_client_step, dp_client_step, server_update
from fedselect.sim import (
    ConfigError,
    ExperimentConfig,
    beta_sweep,
    error_to_optimum,
    histogram_mode,
    participation_histogram,
    run_experiment,
    terminal_error,
)
from fedselect.solver import solve_optimal

SMALL = ExperimentConfig(n_clients=40, capacity=20, tau=0.05, steps=3000, mode="dp", beta=2.5, master_seed=3, cost_seed=4)

AGG = ("theta", "sum_X", "sum_x", "avg_eps", "saturation_count", "cost_gap")


def same_aggregates(a, b):
    for name in AGG:
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name), err_msg=name)


def test_symmetric_pair_converges():
    cfg = ExperimentConfig(n_clients=2, capacity=1, tau=0.2, steps=40_000, mode="classical", master_seed=1)
    specs = [CostSpec.quadratic(2.0)] * 2
    tr = run_experiment(cfg, specs=specs)
    np.testing.assert_allclose(tr.x_final, 0.5, atol=0.02)
    assert tr.sum_x[-1] == pytest.approx(1.0, abs=0.02)


def test_matches_scalar_protocol():
    """The vectorized engine replays exactly the scalar client/server functions."""
    for mode in ("classical", "dp"):
        cfg = replace(SMALL, n_clients=6, capacity=3, steps=400, mode=mode, beta=1.0)
        specs = cfg.population()
        tr = run_experiment(cfg, specs=specs)
        clients = [ClientState.join(cfg.master_seed, i, beta=1.0) for i in range(6)]
        server = ServerState(theta=cfg.theta0, tau=cfg.tau, capacity=cfg.capacity)
        prev = aggregate_participation(clients)
        for k in range(cfg.steps):
            if mode == "dp":
                clients = [dp_client_step(c, server.theta, s)[0] for c, s in zip(clients, specs)]
            else:
                clients = [classical_client_step(c, server.theta, s) for c, s in zip(clients, specs)]
            server = server_update(server, prev)
            prev = aggregate_participation(clients)
            assert tr.theta[k] == server.theta
            assert tr.sum_X[k] == prev
        np.testing.assert_array_equal(tr.x_final, [c.avg_participation for c in clients])


def test_deterministic():
    a = run_experiment(SMALL)
    b = run_experiment(SMALL)
    same_aggregates(a, b)
    np.testing.assert_array_equal(a.x_final, b.x_final)


def test_seed_changes_trajectory():
    a = run_experiment(SMALL)
    b = run_experiment(replace(SMALL, master_seed=4))
    assert not np.array_equal(a.sum_X, b.sum_X)


def test_thread_count_invariance(monkeypatch):
    base = run_experiment(replace(SMALL, threads=1))
    for t in (2, 3, 7):
        same_aggregates(base, run_experiment(replace(SMALL, threads=t)))
    monkeypatch.setenv("FEDSELECT_THREADS", "4")
    assert SMALL.worker_count() == 4
    same_aggregates(base, run_experiment(SMALL))


def test_p_zero_reduces_to_classical():
    dp = run_experiment(replace(SMALL, p_override=0.0))
    cl = run_experiment(replace(SMALL, mode="classical"))
    for name in ("theta", "sum_X", "sum_x", "saturation_count", "cost_gap"):
        np.testing.assert_array_equal(getattr(dp, name), getattr(cl, name))
    np.testing.assert_array_equal(dp.x_final, cl.x_final)


def test_thinning_does_not_change_aggregates():
    a = run_experiment(SMALL)
    b = run_experiment(replace(SMALL, trace_thinning=7))
    same_aggregates(a, b)
    assert b.client_steps.tolist() == list(range(7, SMALL.steps + 1, 7))
    assert b.client_x.shape == (len(b.client_steps), SMALL.n_clients)
    assert b.ledger.series_steps == b.client_steps.tolist()


def test_trace_invariants():
    tr = run_experiment(SMALL)
    cfg = tr.config
    assert len(tr.step) == cfg.steps and tr.step[0] == 1
    assert np.all((tr.sum_X >= 0) & (tr.sum_X <= cfg.n_clients))
    assert np.all((tr.sum_x > 0) & (tr.sum_x <= cfg.n_clients))
    assert np.all((tr.theta >= cfg.theta_min) & (tr.theta <= cfg.theta_max))
    # theta(k+1) = clamp(theta(k) - tau (sum_X(k) - C))
    prev = np.concatenate([[cfg.theta0], tr.theta[:-1]])
    prev_total = np.concatenate([[cfg.n_clients], tr.sum_X[:-1]])
    expected = np.clip(prev - cfg.tau * (prev_total - cfg.capacity), cfg.theta_min, cfg.theta_max)
    np.testing.assert_array_equal(tr.theta, expected)
    # budgets are finite whenever no client saturates
    assert np.all(np.isfinite(tr.avg_eps[tr.saturation_count == 0]))


def test_theta_clamped_to_bounds():
    cfg = replace(SMALL, theta_max=2.0, tau=1.0)
    tr = run_experiment(cfg)
    assert tr.theta.max() <= 2.0 and tr.theta.min() >= cfg.theta_min
    assert (tr.theta == 2.0).any() and (tr.theta == cfg.theta_min).any()


def test_capacity_tracking_classical():
    cfg = ExperimentConfig(n_clients=200, capacity=80, tau=0.02, steps=8000, mode="classical", cost_seed=2, master_seed=5)
    tr = run_experiment(cfg)
    tail = tr.sum_X[cfg.steps // 2 :]
    assert abs(tail.mean() - 80) <= 3 * np.sqrt(80)


def test_dp_sum_of_averages_near_capacity():
    for beta in (1.0, 3.5):
        tr = run_experiment(replace(SMALL, n_clients=200, capacity=80, tau=0.02, steps=8000, beta=beta))
        assert abs(tr.sum_x[-1] - 80) <= 0.05 * 80


def test_config_validation():
    bad = [
        dict(capacity=40), dict(capacity=0), dict(steps=0), dict(tau=0), dict(mode="x"),
        dict(beta=0.0), dict(theta0=0.0), dict(baseline="x"), dict(families=("v",)),
        dict(beta=(1.0, 2.0)), dict(p_override=1.0), dict(burn_in_frac=1.0),
    ]
    for kw in bad:
        with pytest.raises(ConfigError):
            run_experiment(replace(SMALL, **kw))


def test_per_client_beta():
    betas = tuple(np.linspace(0.5, 4, SMALL.n_clients))
    tr = run_experiment(replace(SMALL, beta=betas))
    np.testing.assert_array_equal(tr.beta, betas)


def test_error_to_optimum():
    tr = run_experiment(replace(SMALL, trace_thinning=500))
    steps, err = error_to_optimum(tr)
    assert steps.tolist() == [500, 1000, 1500, 2000, 2500, 3000]  # burn-in is 300
    np.testing.assert_array_equal(err[-1], terminal_error(tr))
    steps, err = error_to_optimum(tr, tr.x_final)
    assert np.all(err[-1] == 0)
    res = solve_optimal(tr.config.population(), tr.config.capacity)
    np.testing.assert_array_equal(error_to_optimum(tr, res)[1], error_to_optimum(tr)[1])
    with pytest.raises(ValueError):
        error_to_optimum(tr, np.zeros(3))


def test_error_to_optimum_without_thinning_uses_final():
    tr = run_experiment(SMALL)
    steps, err = error_to_optimum(tr)
    assert steps.tolist() == [SMALL.steps]
    assert err.shape == (1, SMALL.n_clients)


def test_classical_baseline_switch():
    tr = run_experiment(replace(SMALL, baseline="classical"))
    ref = run_experiment(replace(SMALL, mode="classical"))
    np.testing.assert_array_equal(tr.x_star, ref.x_final)


def test_beta_sweep_single_equals_run():
    (beta, tr), = beta_sweep(SMALL, [2.5])
    assert beta == 2.5
    same_aggregates(tr, run_experiment(SMALL))
    with pytest.raises(ConfigError):
        beta_sweep(SMALL, [])


def test_histogram():
    # microscopic costs saturate everyone: sum_X is constant
    cfg = replace(SMALL, mode="classical", a_range=(1e-9, 1e-8), b_range=(1e-9, 1e-8), steps=200)
    tr = run_experiment(cfg)
    starts, counts = participation_histogram(tr, 200)
    assert starts.tolist() == [40] and counts.tolist() == [200]
    tr = run_experiment(SMALL)
    starts, counts = participation_histogram(tr, 400, bin_width=3)
    assert counts.sum() == 400 and np.all(starts % 3 == 0)
    assert abs(histogram_mode(tr, 400) - 20) <= 4
    with pytest.raises(ValueError):
        participation_histogram(tr, 0)
    with pytest.raises(ValueError):
        participation_histogram(tr, SMALL.steps + 1)


def test_population_mismatch():
    with pytest.raises(ConfigError):
        run_experiment(SMALL, specs=sample_cost_population(3, seed=1))

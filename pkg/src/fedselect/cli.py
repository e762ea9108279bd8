"""Command-line front end.

Exit codes: 0 success (or PASS), 1 statistical FAIL in ``check-dp``,
2 configuration or usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import __version__
from .config import PRESETS, RunSpec, config_dict, load, parse_overrides
from .cost import CostTable
from .privacy import empirical_epsilon, epsilon_step
from .protocol import recommend_tau, rr_probability
from .sim import ConfigError, SimTrace, beta_sweep, run_experiment
from .solver import InfeasibleError, solve_optimal

log = logging.getLogger("fedselect")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

TRACE_COLUMNS = ("step", "theta", "sum_X", "sum_x", "avg_eps", "saturation_count", "cost_gap")
CLIENT_COLUMNS = ("client_id", "beta", "x_final", "x_star", "abs_err", "eps_final", "eps_mean", "eps_max")
OPTIMUM_COLUMNS = ("client_id", "x_star", "f_prime_at_star", "lambda_star", "residual")


class RuntimeFailure(RuntimeError):
    pass


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_trace(path: Path, trace: SimTrace) -> None:
    _write_csv(path, TRACE_COLUMNS, trace.aggregate_rows())


def read_trace(path: Path) -> list[tuple]:
    """Parse trace.csv back into typed rows."""
    conv = (int, float, int, float, float, int, float)
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {header}")
        return [tuple(c(v) for c, v in zip(conv, row)) for row in r]


def write_clients(path: Path, trace: SimTrace) -> None:
    err = np.abs(trace.x_final - trace.x_star)
    rows = zip(
        range(trace.n_clients), trace.beta, trace.x_final, trace.x_star, err,
        trace.eps_final, trace.eps_mean, trace.eps_max,
    )
    _write_csv(path, CLIENT_COLUMNS, rows)


def write_client_series(path: Path, trace: SimTrace) -> None:
    ledger = trace.ledger

    def rows():
        for r, step in enumerate(trace.client_steps):
            eps = ledger.series[r] if ledger is not None else np.full(trace.n_clients, np.nan)
            for i in range(trace.n_clients):
                yield (int(step), i, trace.client_x[r, i], abs(trace.client_x[r, i] - trace.x_star[i]), eps[i])

    _write_csv(path, ("step", "client_id", "x", "abs_err", "eps"), rows())


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@contextmanager
def locked_dir(out: Path) -> Iterator[Path]:
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".fedselect.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeFailure(f"output directory {out} is in use (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out: Path, spec: RunSpec, files: list[Path], started: str) -> Path:
    manifest = {
        "config": config_dict(spec.experiment),
        "tau_source": spec.tau_source,
        "sweep_betas": list(spec.sweep_betas),
        "sweep_classical": spec.sweep_classical,
        "version": __version__,
        "master_seed": spec.experiment.master_seed,
        "started": started,
        "finished": _now(),
        "outputs": [{"path": f.relative_to(out).as_posix(), "sha256": sha256(f)} for f in files],
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, allow_nan=True) + "\n")
    return path


def _emit_run(dirpath: Path, trace: SimTrace) -> list[Path]:
    dirpath.mkdir(parents=True, exist_ok=True)
    files = [dirpath / "trace.csv", dirpath / "clients.csv"]
    write_trace(files[0], trace)
    write_clients(files[1], trace)
    if len(trace.client_steps):
        files.append(dirpath / "client_series.csv")
        write_client_series(files[-1], trace)
    return files


def beta_label(beta: float) -> str:
    return f"beta-{beta:g}"


def execute(spec: RunSpec, out: Path, sweep: bool = False) -> list[Path]:
    """Run one experiment or a sweep and write its CSVs under ``out``."""
    cfg = spec.experiment
    if not (sweep or spec.sweep_betas):
        trace = run_experiment(cfg)
        return _emit_run(out, trace)
    betas = spec.sweep_betas or (cfg.beta if isinstance(cfg.beta, float) else 1.0,)
    specs = cfg.population()
    files: list[Path] = []
    results = beta_sweep(cfg, betas, specs=specs)
    for beta, trace in results:
        files += _emit_run(out / beta_label(beta), trace)
    if spec.sweep_classical:
        x_star = results[0][1].x_star
        trace = run_experiment(replace(cfg, mode="classical"), specs=specs, x_star=x_star)
        files += _emit_run(out / "classical", trace)
    return files


def _load_spec(args) -> RunSpec:
    overrides = parse_overrides(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = str(args.seed)
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = str(args.steps)
    if getattr(args, "betas", None):
        overrides["sweep.betas"] = args.betas
    if not (args.config or args.preset or overrides):
        raise ConfigError("give --config, --preset or --set")
    return load(args.config, args.preset, overrides)


def cmd_run(args, sweep: bool = False) -> int:
    spec = _load_spec(args)
    out = Path(args.out)
    started = _now()
    with locked_dir(out):
        files = execute(spec, out, sweep=sweep)
        write_manifest(out, spec, files, started)
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    spec = _load_spec(args)
    cfg = spec.experiment
    specs = cfg.population()
    res = solve_optimal(specs, cfg.capacity)
    fp = CostTable(specs).derivative(res.x_star)
    out = Path(args.out)
    started = _now()
    with locked_dir(out):
        path = out / "optimum.csv"
        rows = ((i, res.x_star[i], fp[i], res.lambda_star, res.residual) for i in range(len(specs)))
        _write_csv(path, OPTIMUM_COLUMNS, rows)
        write_manifest(out, spec, [path], started)
    print(f"lambda* = {res.lambda_star:.10g}, residual = {res.residual:.3g}")
    return EXIT_OK


def check_dp(sigma: float, beta: float, trials: int, seed: int) -> tuple[bool, float, float, float]:
    """Closed form vs Monte Carlo; returns (passed, eps, eps_hat, stderr)."""
    p = rr_probability(beta)
    eps = epsilon_step(sigma, p)
    eps_hat, se = empirical_epsilon(sigma, p, trials, seed)
    return abs(eps_hat - eps) <= 3 * se, eps, eps_hat, se


def cmd_check_dp(args) -> int:
    if not 0 <= args.sigma < 1 or args.beta <= 0 or args.trials < 10_000:
        raise ConfigError("need 0 <= sigma < 1, beta > 0, trials >= 10000")
    ok, eps, eps_hat, se = check_dp(args.sigma, args.beta, args.trials, args.seed)
    print(f"closed-form eps = {eps:.6f}")
    print(f"empirical eps   = {eps_hat:.6f}")
    print(f"stderr          = {se:.6f}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_validate_tau(args) -> int:
    spec = _load_spec(args)
    x_floor = args.x_floor if args.x_floor is not None else spec.x_floor
    if not 0 < x_floor <= 1:
        raise ConfigError("x_floor must lie in (0, 1]")
    rec = recommend_tau(spec.population(), x_floor)
    tau = spec.experiment.tau
    print(f"recommended tau (x_floor={x_floor:g}) = {rec:.10g}")
    print(f"configured tau = {tau:.10g}: {'below' if tau < rec else 'NOT below'} recommendation")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors share the config exit code
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedselect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def config_args(sp, out_default):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--preset", choices=PRESETS)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--out", default=out_default, help="output directory")

    for name in ("run", "sweep"):
        sp = sub.add_parser(name, help="simulate" if name == "run" else "simulate a beta sweep")
        config_args(sp, "out")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--mode", choices=("classical", "dp"))
        sp.add_argument("--steps", type=int)
        if name == "sweep":
            sp.add_argument("--betas", help="comma separated privacy parameters")

    sp = sub.add_parser("solve", help="exact optimum of the allocation problem")
    config_args(sp, "out")

    sp = sub.add_parser("check-dp", help="Monte-Carlo check of the per-step budget")
    sp.add_argument("--sigma", type=float, required=True)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--trials", type=int, default=1_000_000)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("validate-tau", help="compare tau against the grid bound")
    config_args(sp, "out")
    sp.add_argument("--x-floor", type=float, default=None)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {
        "run": cmd_run,
        "sweep": lambda a: cmd_run(a, sweep=True),
        "solve": cmd_solve,
        "check-dp": cmd_check_dp,
        "validate-tau": cmd_validate_tau,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, InfeasibleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

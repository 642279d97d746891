"""Command-line front end: simulate, correlate, calibrate, bench.

Configuration is one YAML file with ``model``, ``engine`` and ``output``
sections (plus an optional ``calibration`` section); unknown keys anywhere
are errors, since silently ignored typos are a classic hazard in stochastic
configs.  Every emitted CSV is a deterministic function of (config, seed):
identical bytes for any worker count.

Exit codes: 0 success, 1 configuration error (message names the field
path), 2 I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .calibration import (
    CalibrationProblem,
    FirmParams,
    load_historical_csv,
    calibrate,
)
from .estimation import (
    default_correlation,
    default_correlation_percycle,
    firm_samples,
    fit_gamma_moments,
    kde_density,
    optimal_bandwidth,
)
from .model import FirmSpec, JumpLaw, MarketModel, ModelError, Threshold
from .samplers import simulate_conventional, simulate_munif
from .stochastic import SumOfUniformsTable

__all__ = ["main", "load_config", "RunConfig", "ConfigError"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

# Below this much total CPU the bench ratio is unreported (timer resolution).
BENCH_TIME_FLOOR = 0.05


class ConfigError(Exception):
    """Invalid configuration; the message starts with the field path."""


@dataclass(frozen=True)
class RunConfig:
    model: MarketModel
    method: str
    runs: int
    seed: int
    workers: int
    delta: float | None
    interjump_mean_one: bool
    grid_points: int
    out_dir: Path
    correlation_batch: int
    calibration: dict[str, Any] | None


def _check_keys(section: dict, path: str, allowed: set[str], required: set[str]) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected a mapping")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")
    for key in required:
        if key not in section:
            raise ConfigError(f"{path}.{key}: required key missing")


def _num(section: dict, path: str, key: str, default=None) -> float:
    val = section.get(key, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {val!r}")
    return float(val)


def _int(section: dict, path: str, key: str, default=None) -> int:
    val = section.get(key, default)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {val!r}")
    return val


def _bool(section: dict, path: str, key: str, default: bool) -> bool:
    val = section.get(key, default)
    if not isinstance(val, bool):
        raise ConfigError(f"{path}.{key}: expected a boolean, got {val!r}")
    return val


def _build_firm(spec: dict, path: str) -> FirmSpec:
    _check_keys(
        spec,
        path,
        allowed={"name", "mu", "sigma_row", "x0", "threshold", "jump_laws"},
        required={"mu", "sigma_row", "x0", "threshold", "jump_laws"},
    )
    th = spec["threshold"]
    _check_keys(th, f"{path}.threshold", allowed={"kappa", "gamma"}, required={"kappa", "gamma"})
    if not isinstance(spec["sigma_row"], list):
        raise ConfigError(f"{path}.sigma_row: expected a list of numbers")
    laws = spec["jump_laws"]
    if not isinstance(laws, list):
        raise ConfigError(f"{path}.jump_laws: expected a list (one law per shock)")
    jump_laws = []
    for k, law in enumerate(laws):
        lp = f"{path}.jump_laws[{k}]"
        _check_keys(law, lp, allowed={"mu_z", "sigma_z"}, required={"mu_z", "sigma_z"})
        jump_laws.append(JumpLaw(_num(law, lp, "mu_z"), _num(law, lp, "sigma_z")))
    name = spec.get("name", "")
    if not isinstance(name, str):
        raise ConfigError(f"{path}.name: expected a string")
    return FirmSpec(
        mu=_num(spec, path, "mu"),
        sigma_row=tuple(float(v) for v in spec["sigma_row"]),
        jump_laws=tuple(jump_laws),
        threshold=Threshold(
            kappa=_num(th, f"{path}.threshold", "kappa"),
            gamma=_num(th, f"{path}.threshold", "gamma"),
        ),
        x0=_num(spec, path, "x0"),
        name=name,
    )


def _matrix(section: dict, path: str, key: str) -> tuple[tuple[float, ...], ...] | None:
    raw = section.get(key)
    if raw is None:
        return None
    if not isinstance(raw, list) or not all(isinstance(r, list) for r in raw):
        raise ConfigError(f"{path}.{key}: expected a list of rows")
    return tuple(tuple(float(v) for v in row) for row in raw)


def load_config(path: str | Path) -> RunConfig:
    """Load and validate a run configuration; raises ``ConfigError``."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    _check_keys(
        raw, "config", allowed={"model", "engine", "output", "calibration"},
        required={"model", "engine"},
    )

    msec = raw["model"]
    _check_keys(
        msec,
        "model",
        allowed={"horizon", "shock_intensities", "firms", "bridge_correlations", "jump_correlations"},
        required={"horizon", "shock_intensities", "firms"},
    )
    if not isinstance(msec["firms"], list) or not msec["firms"]:
        raise ConfigError("model.firms: expected a non-empty list")
    if not isinstance(msec["shock_intensities"], list):
        raise ConfigError("model.shock_intensities: expected a list of numbers")
    firms = tuple(
        _build_firm(f, f"model.firms[{i}]") for i, f in enumerate(msec["firms"])
    )
    try:
        model = MarketModel(
            firms=firms,
            shock_intensities=tuple(float(v) for v in msec["shock_intensities"]),
            horizon=_num(msec, "model", "horizon"),
            bridge_correlations=_matrix(msec, "model", "bridge_correlations"),
            jump_correlations=_matrix(msec, "model", "jump_correlations"),
        )
    except ModelError as exc:
        raise ConfigError(f"model: {exc}") from exc

    esec = raw["engine"]
    _check_keys(
        esec,
        "engine",
        allowed={"method", "runs", "seed", "workers", "delta", "interjump_mean_one"},
        required={"method", "runs", "seed"},
    )
    method = esec["method"]
    if method not in ("conventional", "munif"):
        raise ConfigError(f"engine.method: expected 'conventional' or 'munif', got {method!r}")
    runs = _int(esec, "engine", "runs")
    if runs <= 0:
        raise ConfigError(f"engine.runs: must be positive, got {runs}")
    seed = _int(esec, "engine", "seed")
    if not 0 <= seed < 2**64:
        raise ConfigError("engine.seed: must be an unsigned 64-bit integer")
    workers = _int(esec, "engine", "workers", 1)
    if workers < 1:
        raise ConfigError(f"engine.workers: must be >= 1, got {workers}")
    delta = None
    if method == "conventional":
        if "delta" not in esec:
            raise ConfigError("engine.delta: required when engine.method = 'conventional'")
        delta = _num(esec, "engine", "delta")
        if delta <= 0:
            raise ConfigError(f"engine.delta: must be positive, got {delta}")
    elif "delta" in esec:
        delta = _num(esec, "engine", "delta")  # accepted and ignored by munif

    osec = raw.get("output", {})
    _check_keys(
        osec, "output", allowed={"grid_points", "directory", "correlation_batch"}, required=set()
    )
    grid_points = _int(osec, "output", "grid_points", 200)
    if grid_points < 2:
        raise ConfigError(f"output.grid_points: must be >= 2, got {grid_points}")
    out_dir = Path(osec.get("directory", "out"))
    correlation_batch = _int(osec, "output", "correlation_batch", 1000)
    if correlation_batch < 2:
        raise ConfigError("output.correlation_batch: must be >= 2")

    csec = raw.get("calibration")
    if csec is not None:
        _check_keys(
            csec,
            "calibration",
            allowed={
                "historical_csv",
                "runs_per_eval",
                "optimizer",
                "shared_lambda",
                "max_evals_per_stage",
                "seed",
                "initial",
            },
            required={"historical_csv"},
        )
        hist = Path(csec["historical_csv"])
        if not hist.exists():
            raise ConfigError(f"calibration.historical_csv: file not found: {hist}")

    return RunConfig(
        model=model,
        method=method,
        runs=runs,
        seed=seed,
        workers=workers,
        delta=delta,
        interjump_mean_one=_bool(esec, "engine", "interjump_mean_one", False),
        grid_points=grid_points,
        out_dir=out_dir,
        correlation_batch=correlation_batch,
        calibration=csec,
    )


def _simulate_with_config(cfg: RunConfig) -> tuple[list, float]:
    t0 = time.process_time()
    if cfg.method == "conventional":
        outcomes = simulate_conventional(
            cfg.model,
            cfg.delta,
            cfg.runs,
            cfg.seed,
            workers=cfg.workers,
            interjump_mean_one=cfg.interjump_mean_one,
        )
    else:
        outcomes = simulate_munif(
            cfg.model,
            cfg.runs,
            cfg.seed,
            workers=cfg.workers,
            interjump_mean_one=cfg.interjump_mean_one,
        )
    return outcomes, time.process_time() - t0


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _cumulative_trapezoid(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    steps = 0.5 * (values[1:] + values[:-1]) * np.diff(grid)
    return np.concatenate([[0.0], np.cumsum(steps)])


def cmd_simulate(cfg: RunConfig) -> int:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    outcomes, cpu = _simulate_with_config(cfg)
    print(f"{cfg.method}: {cfg.runs} runs, {cpu / cfg.runs:.3e} cpu-seconds per run")

    grid = np.linspace(0.0, cfg.model.horizon, cfg.grid_points)
    density_rows = []
    rate_rows = []
    sample_rows = []
    for i in range(cfg.model.n_firms):
        name = cfg.model.firm_name(i)
        times, weights = firm_samples(outcomes, i)
        if times.size >= 2:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                h = optimal_bandwidth(fit_gamma_moments(times, weights), int(times.size))
            de = kde_density(times, weights, h, grid, cfg.runs)
            values = de.values
            print(f"{name}: h_opt = {h:.6f} ({times.size} samples)")
        else:
            h = float("nan")
            values = np.zeros_like(grid)
            print(f"{name}: h_opt undefined ({times.size} samples)")
        rates = _cumulative_trapezoid(values, grid)
        for t, v, r in zip(grid, values, rates):
            density_rows.append((name, float(t), float(v)))
            rate_rows.append((name, float(t), float(r)))
    for o in outcomes:
        for s in o.samples:
            if s is not None:
                sample_rows.append(
                    (cfg.model.firm_name(s.firm), o.run, s.time, s.weight, s.kind.value)
                )

    _write_csv(cfg.out_dir / "density.csv", ["firm", "t", "density"], density_rows)
    _write_csv(
        cfg.out_dir / "default_rates.csv", ["firm", "t", "cumulative_rate"], rate_rows
    )
    _write_csv(
        cfg.out_dir / "samples.csv", ["firm", "run", "time", "weight", "kind"], sample_rows
    )
    print(f"wrote density.csv, default_rates.csv, samples.csv to {cfg.out_dir}")
    return EXIT_OK


def cmd_correlate(cfg: RunConfig) -> int:
    if cfg.model.n_firms < 2:
        raise ConfigError("model.firms: correlate needs at least 2 firms")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    outcomes, cpu = _simulate_with_config(cfg)
    print(f"{cfg.method}: {cfg.runs} runs, {cpu / cfg.runs:.3e} cpu-seconds per run")

    years = [float(t) for t in range(1, int(math.floor(cfg.model.horizon)) + 1)]
    if not years:
        years = [cfg.model.horizon]
    rows = []
    for i in range(cfg.model.n_firms):
        for j in range(i + 1, cfg.model.n_firms):
            for t in years:
                try:
                    agg = default_correlation(outcomes, i, j, t)
                except ValueError:
                    agg = float("nan")
                try:
                    per = default_correlation_percycle(
                        outcomes, i, j, t, cfg.correlation_batch
                    )
                except ValueError:
                    per = float("nan")
                rows.append(
                    (cfg.model.firm_name(i), cfg.model.firm_name(j), t, agg, per)
                )
    _write_csv(
        cfg.out_dir / "correlations.csv",
        ["firm_a", "firm_b", "t", "rho_aggregate", "rho_percycle"],
        rows,
    )
    print(f"wrote correlations.csv to {cfg.out_dir}")
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    if cfg.calibration is None:
        raise ConfigError("calibration: section required for the calibrate command")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    csec = cfg.calibration
    try:
        tables = load_historical_csv(csec["historical_csv"])
    except ValueError as exc:
        raise ConfigError(f"calibration.historical_csv: {exc}") from exc
    by_rating = {t.rating: t for t in tables}
    wanted = [cfg.model.firm_name(i) for i in range(cfg.model.n_firms)]
    missing = [name for name in wanted if name not in by_rating]
    if missing:
        raise ConfigError(
            f"calibration.historical_csv: no table for rating(s) {', '.join(missing)}"
        )
    firms = cfg.model.firms
    conventions = {(f.x0, f.threshold.kappa, f.threshold.gamma, f.mu) for f in firms}
    if len(conventions) != 1:
        raise ConfigError(
            "model.firms: calibration requires all firms to share x0, threshold and mu conventions"
        )
    x0, kappa, gamma, mu = next(iter(conventions))
    problem = CalibrationProblem(
        horizon=cfg.model.horizon,
        x0=x0,
        kappa=kappa,
        gamma=gamma,
        mu=mu,
        runs_per_eval=csec.get("runs_per_eval", 50_000),
        seed=csec.get("seed", cfg.seed),
        shared_lambda=csec.get("shared_lambda", True),
        optimizer=csec.get("optimizer", "nelder-mead"),
        max_evals_per_stage=csec.get("max_evals_per_stage", 200),
        grid_points=cfg.grid_points,
    )
    ordered_tables = [by_rating[name] for name in wanted]
    start = None
    if "initial" in csec:
        init = csec["initial"]
        _check_keys(
            init,
            "calibration.initial",
            allowed={"sigma", "lambda", "mu_z", "sigma_z"},
            required={"sigma", "lambda", "mu_z", "sigma_z"},
        )
        start = [
            FirmParams(
                name,
                sigma=float(init["sigma"]),
                lam=float(init["lambda"]),
                mu_z=float(init["mu_z"]),
                sigma_z=float(init["sigma_z"]),
            )
            for name in wanted
        ]
    print(
        f"calibrating {len(ordered_tables)} rating(s), {problem.runs_per_eval} runs per "
        f"evaluation, optimizer {problem.optimizer}"
    )
    result = calibrate(problem, ordered_tables, start)
    _write_csv(
        cfg.out_dir / "fitted_params.csv",
        ["rating", "sigma", "lambda", "mu_Z", "sigma_Z"],
        [(p.rating, p.sigma, p.lam, p.mu_z, p.sigma_z) for p in result.params],
    )
    _write_csv(
        cfg.out_dir / "trace.csv",
        ["eval", "stage", "sigma", "lambda", "mu_Z", "sigma_Z", "objective"],
        [
            (t.index, t.stage, t.params.sigma, t.params.lam, t.params.mu_z, t.params.sigma_z, t.value)
            for t in result.trace
        ],
    )
    status = "converged" if result.converged else "iteration cap reached (best-so-far)"
    print(f"objective {result.objective:.6f} after {result.n_evals} evaluations; {status}")
    print(f"wrote fitted_params.csv, trace.csv to {cfg.out_dir}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    if cfg.delta is None:
        raise ConfigError("engine.delta: required for the bench command")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)

    # single worker so process_time sees all the work; best-of-3 repetitions
    # suppresses scheduler noise
    def timed(fn) -> float:
        best = math.inf
        for _ in range(3):
            t0 = time.process_time()
            fn()
            best = min(best, time.process_time() - t0)
        return best

    conv_total = timed(
        lambda: simulate_conventional(
            cfg.model, cfg.delta, cfg.runs, cfg.seed, interjump_mean_one=cfg.interjump_mean_one
        )
    )
    munif_total = timed(
        lambda: simulate_munif(
            cfg.model, cfg.runs, cfg.seed, interjump_mean_one=cfg.interjump_mean_one
        )
    )
    conv_per = conv_total / cfg.runs
    munif_per = munif_total / cfg.runs
    if conv_total < BENCH_TIME_FLOOR or munif_total < BENCH_TIME_FLOOR:
        ratio = None
        ratio_str = "unreported (below timer floor)"
    else:
        ratio = conv_per / munif_per
        ratio_str = f"{ratio:.1f}x"
    print(f"conventional: {conv_per:.6e} cpu-seconds per run ({cfg.runs} runs)")
    print(f"munif:        {munif_per:.6e} cpu-seconds per run ({cfg.runs} runs)")
    print(f"conventional/munif ratio: {ratio_str}")
    rows = [
        ("conventional", conv_per, ratio if ratio is not None else ""),
        ("munif", munif_per, ratio if ratio is not None else ""),
    ]
    _write_csv(cfg.out_dir / "bench.csv", ["engine", "per_run_cpu_seconds", "ratio"], rows)
    print(f"wrote bench.csv to {cfg.out_dir}")
    return EXIT_OK


def cmd_sou_table(args) -> int:
    table = SumOfUniformsTable.build(
        samples=args.samples, seed=args.seed, grid_step=args.grid_step
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.save(out)
    print(f"wrote sum-of-uniforms calibration table ({len(table.c_grid)} points) to {out}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fptmc",
        description="Monte-Carlo first-passage-time toolkit for correlated jump-diffusion credit models",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "simulate and write density/default-rate/sample CSVs"),
        ("correlate", "estimate pairwise default correlations over the horizon"),
        ("calibrate", "fit per-rating parameters to a historical CSV"),
        ("bench", "time both engines on the configured model"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML configuration file")
        p.add_argument("--seed", type=int, default=None, help="override engine.seed")
        p.add_argument("--workers", type=int, default=None, help="override engine.workers")
        p.add_argument("--out", default=None, help="override output.directory")
    p = sub.add_parser("sou-table", help="regenerate the sum-of-uniforms calibration table")
    p.add_argument("--out", required=True, help="output JSON path")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--grid-step", type=float, default=0.02, dest="grid_step")
    p.add_argument("--seed", type=int, default=20240601)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "sou-table":
            return cmd_sou_table(args)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.workers is not None:
            cfg = replace(cfg, workers=args.workers)
        if args.out is not None:
            cfg = replace(cfg, out_dir=Path(args.out))
        handler = {
            "simulate": cmd_simulate,
            "correlate": cmd_correlate,
            "calibrate": cmd_calibrate,
            "bench": cmd_bench,
        }[args.command]
        return handler(cfg)
    except (ConfigError, ModelError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

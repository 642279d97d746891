"""Fitting per-firm parameters to historical cumulative default-rate tables.

Each firm is described by four free parameters (effective volatility, shock
intensity, jump-size mean, jump-size standard deviation) under the fixed
conventions of the application: start value, boundary level and growth, and
drift are held constant.  The objective simulates the event-driven engine
with a fixed seed (common random numbers, so the objective is deterministic
and local search is meaningful), turns the weighted samples into cumulative
default rates through the kernel pipeline, and sums the per-firm
time-weighted root-mean-square gaps to the historical tables.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .estimation import cumulative_default_rate, fit_gamma_moments, firm_samples, kde_density, optimal_bandwidth
from .model import FirmSpec, JumpLaw, MarketModel, Threshold
from .samplers import simulate_munif

__all__ = [
    "HistoricalTable",
    "FirmParams",
    "CalibrationProblem",
    "TraceEntry",
    "CalibrationResult",
    "load_historical_csv",
    "objective",
    "calibrate",
]


@dataclass(frozen=True)
class HistoricalTable:
    """Historical cumulative default rates for one rating class."""

    rating: str
    years: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "years", tuple(float(t) for t in self.years))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if not self.years or len(self.years) != len(self.rates):
            raise ValueError(f"{self.rating}: need matching non-empty years/rates")
        if self.years[0] <= 0.0 or any(
            b <= a for a, b in zip(self.years, self.years[1:])
        ):
            raise ValueError(f"{self.rating}: years must be strictly increasing and positive")
        if any(not 0.0 <= r <= 1.0 for r in self.rates):
            raise ValueError(f"{self.rating}: rates must lie in [0, 1]")
        if any(b < a for a, b in zip(self.rates, self.rates[1:])):
            raise ValueError(f"{self.rating}: cumulative rates must be non-decreasing")


@dataclass(frozen=True)
class FirmParams:
    """The four free parameters of one firm."""

    rating: str
    sigma: float
    lam: float
    mu_z: float
    sigma_z: float


@dataclass(frozen=True)
class CalibrationProblem:
    """Conventions, bounds, and budget for one calibration.

    ``x0``, ``kappa``, ``gamma`` and ``mu`` are the fixed per-firm
    conventions; only (sigma, lam, mu_z, sigma_z) are optimized.  With
    ``shared_lambda`` the intensity is fitted on the first rating and frozen
    for the rest.  ``seed`` pins the common random numbers: every objective
    evaluation reuses it, making the objective deterministic.
    """

    horizon: float = 10.0
    x0: float = 2.0
    kappa: float = 1.0
    gamma: float = -0.001
    mu: float = -0.001
    runs_per_eval: int = 50_000
    seed: int = 20240601
    shared_lambda: bool = True
    optimizer: str = "nelder-mead"  # or "quasi-newton"
    max_evals_per_stage: int = 200
    grid_points: int = 200
    sigma_bounds: tuple[float, float] = (1e-4, 5.0)
    lam_bounds: tuple[float, float] = (1e-4, 20.0)
    mu_z_bounds: tuple[float, float] = (-10.0, 10.0)
    sigma_z_bounds: tuple[float, float] = (1e-4, 20.0)

    def __post_init__(self):
        if self.optimizer not in ("nelder-mead", "quasi-newton"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.runs_per_eval < 100:
            raise ValueError("runs_per_eval too small for a usable objective")


@dataclass(frozen=True)
class TraceEntry:
    """One objective evaluation."""

    index: int
    stage: str
    params: FirmParams
    value: float


@dataclass(frozen=True)
class CalibrationResult:
    params: tuple[FirmParams, ...]
    objective: float
    trace: tuple[TraceEntry, ...]
    converged: bool
    n_evals: int


def load_historical_csv(path) -> list[HistoricalTable]:
    """Parse and validate a ``rating,t_years,cumulative_default_rate`` CSV.

    Tables come back in first-appearance order of their rating; every
    malformed row is reported with its line number.
    """
    rows_by_rating: dict[str, list[tuple[int, float, float]]] = {}
    errors: list[str] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        expected = ["rating", "t_years", "cumulative_default_rate"]
        if [h.strip() for h in header] != expected:
            raise ValueError(f"{path}: line 1: expected header {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                errors.append(f"line {lineno}: expected 3 columns, got {len(row)}")
                continue
            rating = row[0].strip()
            try:
                t = float(row[1])
                r = float(row[2])
            except ValueError:
                errors.append(f"line {lineno}: non-numeric year or rate")
                continue
            if t <= 0.0:
                errors.append(f"line {lineno}: year {t} must be positive")
                continue
            if not 0.0 <= r <= 1.0:
                errors.append(f"line {lineno}: rate {r} outside [0, 1]")
                continue
            rows_by_rating.setdefault(rating, []).append((lineno, t, r))
    if not rows_by_rating and not errors:
        raise ValueError(f"{path}: no data rows")
    tables = []
    for rating, rows in rows_by_rating.items():
        seen: dict[float, int] = {}
        prev_rate = -1.0
        prev_line = 0
        ok = True
        for lineno, t, r in rows:
            if t in seen:
                errors.append(f"line {lineno}: duplicate year {t} for rating {rating} (first at line {seen[t]})")
                ok = False
            seen[t] = lineno
            if r < prev_rate:
                errors.append(
                    f"line {lineno}: rate {r} for rating {rating} decreases from line {prev_line}"
                )
                ok = False
            prev_rate, prev_line = r, lineno
        if ok:
            ordered = sorted(rows, key=lambda it: it[1])
            tables.append(
                HistoricalTable(
                    rating=rating,
                    years=tuple(t for _, t, _ in ordered),
                    rates=tuple(r for _, _, r in ordered),
                )
            )
    if errors:
        raise ValueError(f"{path}: " + "; ".join(errors))
    return tables


def _single_firm_model(problem: CalibrationProblem, p: FirmParams) -> MarketModel:
    firm = FirmSpec(
        mu=problem.mu,
        sigma_row=(p.sigma,),
        jump_laws=(JumpLaw(p.mu_z, p.sigma_z),),
        threshold=Threshold(kappa=problem.kappa, gamma=problem.gamma),
        x0=problem.x0,
        name=p.rating,
    )
    return MarketModel(firms=(firm,), shock_intensities=(p.lam,), horizon=problem.horizon)


def simulated_default_rates(
    problem: CalibrationProblem, p: FirmParams, years: Sequence[float]
) -> list[float]:
    """Cumulative default rates of one parameterized firm at the given years.

    Runs the event-driven engine with the problem's fixed seed and pushes
    the weighted samples through the kernel density pipeline.
    """
    model = _single_firm_model(problem, p)
    outcomes = simulate_munif(model, problem.runs_per_eval, problem.seed)
    times, weights = firm_samples(outcomes, 0)
    if times.size < 2:
        return [0.0 for _ in years]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        h = optimal_bandwidth(fit_gamma_moments(times, weights), times.size)
    grid = np.linspace(0.0, problem.horizon, problem.grid_points)
    de = kde_density(times, weights, h, grid, problem.runs_per_eval)
    return [cumulative_default_rate(de, min(t, problem.horizon)) for t in years]


def _firm_term(problem: CalibrationProblem, p: FirmParams, table: HistoricalTable) -> float:
    rates = simulated_default_rates(problem, p, table.years)
    acc = 0.0
    for t, sim, hist in zip(table.years, rates, table.rates):
        acc += ((sim - hist) / t) ** 2
    return math.sqrt(acc)


def objective(
    problem: CalibrationProblem,
    params: Sequence[FirmParams],
    tables: Sequence[HistoricalTable],
) -> float:
    """Sum over firms of the time-weighted RMS gap to the historical table.

    ``sum_i sqrt( sum_j ((P_i(t_j) - hist_i(t_j)) / t_j)^2 )`` with the
    simulated rates produced under common random numbers, so identical
    (params, seed, runs) give an identical value to the last bit.
    """
    by_rating = {t.rating: t for t in tables}
    total = 0.0
    for p in params:
        if p.rating not in by_rating:
            raise ValueError(f"no historical table for rating {p.rating!r}")
        total += _firm_term(problem, p, by_rating[p.rating])
    return total


def _clip_penalty(x: float, bounds: tuple[float, float]) -> tuple[float, float]:
    lo, hi = bounds
    if x < lo:
        return lo, (lo - x)
    if x > hi:
        return hi, (x - hi)
    return x, 0.0


def _stage_minimize(
    problem: CalibrationProblem,
    table: HistoricalTable,
    start: FirmParams,
    free_lambda: bool,
    trace: list[TraceEntry],
    stage: str,
) -> tuple[FirmParams, float, bool]:
    """Minimize one firm's term over its free parameters (log-transformed)."""

    def decode(vec: np.ndarray) -> tuple[FirmParams, float]:
        sigma = math.exp(vec[0])
        mu_z = vec[1]
        sigma_z = math.exp(vec[2])
        lam = math.exp(vec[3]) if free_lambda else start.lam
        penalty = 0.0
        sigma, pen = _clip_penalty(sigma, problem.sigma_bounds)
        penalty += pen
        mu_z, pen = _clip_penalty(mu_z, problem.mu_z_bounds)
        penalty += pen
        sigma_z, pen = _clip_penalty(sigma_z, problem.sigma_z_bounds)
        penalty += pen
        lam, pen = _clip_penalty(lam, problem.lam_bounds)
        penalty += pen
        return (
            FirmParams(start.rating, sigma=sigma, lam=lam, mu_z=mu_z, sigma_z=sigma_z),
            penalty,
        )

    def fun(vec: np.ndarray) -> float:
        p, penalty = decode(vec)
        val = _firm_term(problem, p, table) + 10.0 * penalty
        trace.append(TraceEntry(len(trace), stage, p, val))
        return val

    x0 = [math.log(start.sigma), start.mu_z, math.log(start.sigma_z)]
    if free_lambda:
        x0.append(math.log(start.lam))
    x0 = np.asarray(x0)

    if problem.optimizer == "nelder-mead":
        res = minimize(
            fun,
            x0,
            method="Nelder-Mead",
            options={
                "maxfev": problem.max_evals_per_stage,
                "xatol": 1e-3,
                "fatol": 1e-8,
                "initial_simplex": _initial_simplex(x0),
            },
        )
    else:
        res = minimize(
            fun,
            x0,
            method="BFGS",
            options={"maxiter": problem.max_evals_per_stage // (len(x0) + 1), "eps": 1e-3},
        )
    best = min((t for t in trace if t.stage == stage), key=lambda t: t.value)
    return best.params, best.value, bool(res.success)


def _initial_simplex(x0: np.ndarray) -> np.ndarray:
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for k in range(n):
        simplex[k + 1, k] += 0.35  # generous spread in log space
    return simplex


def calibrate(
    problem: CalibrationProblem,
    tables: Sequence[HistoricalTable],
    start: Sequence[FirmParams] | None = None,
) -> CalibrationResult:
    """Fit every rating's parameters to its historical table.

    With ``shared_lambda`` the first rating is fitted over all four
    parameters and its intensity is frozen for the remaining ratings (three
    parameters each); otherwise each rating fits all four independently.
    Returns best-found parameters, the full evaluation trace, and a
    convergence flag (best-so-far is returned even at the iteration cap).
    """
    if not tables:
        raise ValueError("need at least one historical table")
    if start is None:
        start = [
            FirmParams(t.rating, sigma=0.15, lam=0.2, mu_z=-0.2, sigma_z=0.5) for t in tables
        ]
    by_rating = {p.rating: p for p in start}
    missing = [t.rating for t in tables if t.rating not in by_rating]
    if missing:
        raise ValueError(f"no start parameters for ratings {missing}")

    trace: list[TraceEntry] = []
    fitted: list[FirmParams] = []
    converged = True
    shared_lam: float | None = None
    for idx, table in enumerate(tables):
        stage = table.rating
        p0 = by_rating[table.rating]
        free_lambda = (not problem.shared_lambda) or idx == 0
        if not free_lambda and shared_lam is not None:
            p0 = replace(p0, lam=shared_lam)
        params, _, ok = _stage_minimize(problem, table, p0, free_lambda, trace, stage)
        converged = converged and ok
        if idx == 0 and problem.shared_lambda:
            shared_lam = params.lam
        fitted.append(params)
    total = objective(problem, fitted, tables)
    return CalibrationResult(
        params=tuple(fitted),
        objective=total,
        trace=tuple(trace),
        converged=converged,
        n_evals=len(trace),
    )

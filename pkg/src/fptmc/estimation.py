"""Turning weighted first-passage samples into densities and default measures.

The density estimator centers a Gaussian kernel on every weighted sample and
divides by the number of Monte-Carlo runs, so the estimated density
integrates to the (weighted) default probability rather than to one.  The
kernel bandwidth comes from the standard plug-in rule with a gamma
stand-in for the unknown true density, fitted by weighted moments.
Default correlations are estimated from joint default indicator frequencies,
either over all runs at once or averaged over fixed-size run batches.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import quad

from .samplers import RunOutcome

__all__ = [
    "EPS_MASS",
    "GammaFit",
    "DensityEstimate",
    "firm_samples",
    "fit_gamma_moments",
    "optimal_bandwidth",
    "kde_density",
    "cumulative_default_rate",
    "default_correlation",
    "default_correlation_percycle",
]

# Tolerance on total kernel mass: covers kernel leakage past the grid edges
# and trapezoidal truncation.
EPS_MASS = 0.02


@dataclass(frozen=True)
class GammaFit:
    """Gamma density ``alpha^beta / Gamma(beta) * t^(beta-1) * exp(-alpha t)``.

    ``alpha`` is the rate and ``beta`` the shape; mean is ``beta/alpha`` and
    variance ``beta/alpha^2``.
    """

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and self.beta > 0.0):
            raise ValueError(f"alpha and beta must be positive, got ({self.alpha}, {self.beta})")

    def density(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            logpdf = (
                self.beta * math.log(self.alpha)
                - math.lgamma(self.beta)
                + (self.beta - 1.0) * np.log(t)
                - self.alpha * t
            )
        out = np.where(t > 0.0, np.exp(logpdf), 0.0)
        return out if out.shape else float(out)

    def density_d2(self, t):
        """Second derivative of the density (zero for t <= 0)."""
        t = np.asarray(t, dtype=float)
        f = self.density(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(t > 0.0, (self.beta - 1.0) / t, 0.0)
            curv = (r - self.alpha) ** 2 - np.where(t > 0.0, (self.beta - 1.0) / t**2, 0.0)
        out = np.where(t > 0.0, f * curv, 0.0)
        return out if out.shape else float(out)


@dataclass(frozen=True)
class DensityEstimate:
    """Kernel density on a time grid plus the metadata that produced it."""

    grid: np.ndarray
    values: np.ndarray
    bandwidth: float
    n_runs: int
    total_weighted_mass: float

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ValueError("grid and values must be matching 1-d arrays with >= 2 points")
        if np.any(np.diff(grid) <= 0.0):
            raise ValueError("grid must be strictly increasing")
        if np.any(values < 0.0):
            raise ValueError("density values must be non-negative")
        integral = float(np.trapezoid(values, grid))
        if integral > 1.0 + EPS_MASS:
            raise ValueError(f"density mass {integral} exceeds 1 + {EPS_MASS}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)


def firm_samples(outcomes: Sequence[RunOutcome], firm: int) -> tuple[np.ndarray, np.ndarray]:
    """Times and weights of one firm's first-passage samples, in run order."""
    times, weights = [], []
    for o in outcomes:
        s = o.samples[firm]
        if s is not None:
            times.append(s.time)
            weights.append(s.weight)
    return np.asarray(times, dtype=float), np.asarray(weights, dtype=float)


def fit_gamma_moments(times: np.ndarray, weights: np.ndarray | None = None) -> GammaFit:
    """Weighted method-of-moments gamma fit: ``beta = m^2/v``, ``alpha = m/v``."""
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise ValueError(f"need at least 2 samples, got {times.size}")
    w = np.ones_like(times) if weights is None else np.asarray(weights, dtype=float)
    wsum = float(w.sum())
    if wsum <= 0.0:
        raise ValueError("total weight must be positive")
    m = float((w * times).sum() / wsum)
    v = float((w * (times - m) ** 2).sum() / wsum)
    if v <= 0.0:
        raise ValueError("zero sample variance: gamma fit is degenerate")
    return GammaFit(alpha=m / v, beta=m * m / v)


def _curvature_integral(fit: GammaFit) -> tuple[float, bool]:
    """Integral of the squared second derivative of the gamma density.

    Scaling: the rate only rescales time, so the integral equals ``alpha^5``
    times the value for the unit-rate density.  Near zero, the unit-rate
    integrand behaves like ``t^(2 beta - 6)``, which is non-integrable for
    ``beta < 2.5`` except at the exact shapes 1 and 2 where the singular
    coefficient vanishes.  In the non-integrable regime the integral is
    taken from a small positive cutoff instead (with a warning).
    """
    beta = fit.beta
    unit = GammaFit(alpha=1.0, beta=beta)
    singular = beta < 2.5 and beta not in (1.0, 2.0)
    lower = 0.0
    if singular:
        lower = 1e-3 * beta  # 1e-3 times the unit-rate mean
    rest = max(4.0 * beta, 40.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        part1, _ = quad(
            lambda t: unit.density_d2(t) ** 2, lower, rest, limit=400, epsabs=1e-14, epsrel=1e-11
        )
        part2, _ = quad(
            lambda t: unit.density_d2(t) ** 2, rest, np.inf, limit=400, epsabs=1e-14, epsrel=1e-11
        )
    return float((part1 + part2) * fit.alpha**5), singular


def optimal_bandwidth(fit: GammaFit, n: int) -> float:
    """Plug-in kernel bandwidth ``(2 n sqrt(pi) * I)^(-1/5)``.

    ``I`` is the integral of the squared second derivative of the fitted
    gamma density and ``n`` the number of generated sample points.  For
    shapes where that integral diverges at zero it is truncated at a small
    cutoff and a warning is emitted.
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    integral, truncated = _curvature_integral(fit)
    if truncated:
        warnings.warn(
            f"gamma shape {fit.beta:.4g} <= 2.5 makes the plug-in curvature integral "
            "divergent at 0; using a truncated integral",
            RuntimeWarning,
            stacklevel=2,
        )
    if integral <= 0.0:
        raise ValueError("curvature integral must be positive")
    return (2.0 * n * math.sqrt(math.pi) * integral) ** -0.2


def kde_density(
    times: np.ndarray,
    weights: np.ndarray,
    h: float,
    grid: np.ndarray,
    n_runs: int,
) -> DensityEstimate:
    """Gaussian-kernel density of weighted samples, normalized by runs.

    ``f(t) = (1/n_runs) * sum_k w_k * exp(-(t-s_k)^2 / (2 h^2)) / (h sqrt(2 pi))``.
    Mass leaking below t=0 is neither reflected nor truncated.
    """
    if not h > 0.0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    if n_runs <= 0:
        raise ValueError(f"n_runs must be positive, got {n_runs}")
    times = np.asarray(times, dtype=float)
    w = np.asarray(weights, dtype=float)
    grid = np.asarray(grid, dtype=float)
    values = np.zeros_like(grid)
    norm = 1.0 / (n_runs * h * math.sqrt(2.0 * math.pi))
    inv2h2 = 1.0 / (2.0 * h * h)
    for lo in range(0, times.size, 4096):
        s = times[lo : lo + 4096]
        ww = w[lo : lo + 4096]
        values += (np.exp(-((grid[:, None] - s[None, :]) ** 2) * inv2h2) * ww[None, :]).sum(axis=1)
    values *= norm
    return DensityEstimate(
        grid=grid,
        values=values,
        bandwidth=h,
        n_runs=n_runs,
        total_weighted_mass=float(w.sum()) / n_runs,
    )


def cumulative_default_rate(de: DensityEstimate, t: float) -> float:
    """Trapezoidal integral of the estimated density from the grid start to ``t``."""
    grid, values = de.grid, de.values
    if not (grid[0] <= t <= grid[-1]):
        raise ValueError(f"t={t} outside the grid span [{grid[0]}, {grid[-1]}]")
    k = int(np.searchsorted(grid, t, side="right")) - 1
    total = float(np.trapezoid(values[: k + 1], grid[: k + 1])) if k > 0 else 0.0
    if k < grid.size - 1 and t > grid[k]:
        frac = (t - grid[k]) / (grid[k + 1] - grid[k])
        v_t = values[k] + frac * (values[k + 1] - values[k])
        total += 0.5 * (values[k] + v_t) * (t - grid[k])
    return total


def _default_indicators(
    outcomes: Sequence[RunOutcome], firm_a: int, firm_b: int, t: float
) -> tuple[np.ndarray, np.ndarray]:
    ia = np.zeros(len(outcomes), dtype=bool)
    ib = np.zeros(len(outcomes), dtype=bool)
    for r, o in enumerate(outcomes):
        sa, sb = o.samples[firm_a], o.samples[firm_b]
        ia[r] = sa is not None and sa.time <= t
        ib[r] = sb is not None and sb.time <= t
    return ia, ib


def _corr_from_indicators(ia: np.ndarray, ib: np.ndarray) -> float:
    n = ia.size
    pa = float(ia.sum()) / n
    pb = float(ib.sum()) / n
    if not (0.0 < pa < 1.0) or not (0.0 < pb < 1.0):
        raise ValueError(
            f"default correlation undefined for degenerate marginals ({pa}, {pb})"
        )
    pab = float((ia & ib).sum()) / n
    return (pab - pa * pb) / math.sqrt(pa * (1.0 - pa) * pb * (1.0 - pb))


def default_correlation(
    outcomes: Sequence[RunOutcome], firm_a: int, firm_b: int, t: float
) -> float:
    """Correlation of the two firms' default indicators by horizon ``t``.

    Estimates the marginal and joint default probabilities as frequencies
    over all runs; raises when a marginal frequency is 0 or 1.
    """
    ia, ib = _default_indicators(outcomes, firm_a, firm_b, t)
    return _corr_from_indicators(ia, ib)


def default_correlation_percycle(
    outcomes: Sequence[RunOutcome], firm_a: int, firm_b: int, t: float, batch: int
) -> float:
    """Default correlation averaged over fixed-size run batches.

    Partitions the runs into consecutive batches of ``batch`` runs (a final
    partial batch is kept when it has at least two runs), computes the
    indicator correlation within each batch, and returns the mean over the
    batches that have non-degenerate marginals.  Errors out when more than
    half of the batches are degenerate.
    """
    if batch < 2:
        raise ValueError(f"batch size must be at least 2, got {batch}")
    ia, ib = _default_indicators(outcomes, firm_a, firm_b, t)
    vals = []
    skipped = 0
    total = 0
    for lo in range(0, ia.size, batch):
        ca, cb = ia[lo : lo + batch], ib[lo : lo + batch]
        if ca.size < 2:
            continue
        total += 1
        try:
            vals.append(_corr_from_indicators(ca, cb))
        except ValueError:
            skipped += 1
    if total == 0:
        raise ValueError("no usable batches")
    if skipped > 0.5 * total:
        raise ValueError(
            f"{skipped}/{total} batches had degenerate marginals; per-cycle estimate unreliable"
        )
    return float(np.mean(vals))

"""Domain types for firms, default boundaries, and the joint market model.

A firm's log-value follows a drifted Brownian motion (built from a shared
factor matrix) plus compound-Poisson jumps; it defaults the first time the
log-value touches a boundary that is linear in time.  ``MarketModel`` bundles
the firms with the shock intensities and the correlation inputs the samplers
need.  All types are immutable after construction and safe to share across
worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "ModelError",
    "Threshold",
    "JumpLaw",
    "FirmSpec",
    "MarketModel",
    "threshold_at",
    "effective_sigma",
    "sigma_rows_from_corr",
]


class ModelError(ValueError):
    """A model component violates one of its construction invariants.

    ``rule`` is a stable machine-readable code identifying which invariant
    failed; every validation rule uses a distinct code.
    """

    def __init__(self, rule: str, message: str):
        super().__init__(f"{rule}: {message}")
        self.rule = rule


@dataclass(frozen=True)
class Threshold:
    """Default boundary, linear in log space: ``gamma * t + ln(kappa)``.

    ``kappa`` scales the firm's liabilities and ``gamma`` is their growth
    rate per unit time.
    """

    kappa: float
    gamma: float

    def __post_init__(self):
        if not (self.kappa > 0.0) or not math.isfinite(self.kappa):
            raise ModelError("threshold.kappa", f"kappa must be positive, got {self.kappa}")
        if not math.isfinite(self.gamma):
            raise ModelError("threshold.gamma", f"gamma must be finite, got {self.gamma}")

    @property
    def log_kappa(self) -> float:
        return math.log(self.kappa)


def threshold_at(th: Threshold, t: float) -> float:
    """Boundary level in log space at time ``t >= 0``."""
    return th.gamma * t + math.log(th.kappa)


@dataclass(frozen=True)
class JumpLaw:
    """Normal law for one firm's jump size under one shock type."""

    mu_z: float
    sigma_z: float

    def __post_init__(self):
        if not (self.sigma_z > 0.0) or not math.isfinite(self.sigma_z):
            raise ModelError("jumplaw.sigma_z", f"sigma_z must be positive, got {self.sigma_z}")
        if not math.isfinite(self.mu_z):
            raise ModelError("jumplaw.mu_z", f"mu_z must be finite, got {self.mu_z}")


@dataclass(frozen=True)
class FirmSpec:
    """One firm: drift, diffusion factor row, jump laws, boundary, start value.

    ``sigma_row`` is the firm's row of the factor matrix; the firm's Brownian
    part is ``sum_j sigma_row[j] * W_j(t)`` over the shared standard Brownian
    factors, so its effective volatility is the row's Euclidean norm.
    ``jump_laws`` holds one law per shock type.  ``name`` is a free label
    used in CSV outputs and calibration (defaults to the firm's index).
    """

    mu: float
    sigma_row: tuple[float, ...]
    jump_laws: tuple[JumpLaw, ...]
    threshold: Threshold
    x0: float
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sigma_row", tuple(float(v) for v in self.sigma_row))
        object.__setattr__(self, "jump_laws", tuple(self.jump_laws))
        if not self.sigma_row:
            raise ModelError("firm.sigma_row_empty", "sigma_row must be non-empty")
        if not all(math.isfinite(v) for v in self.sigma_row):
            raise ModelError("firm.sigma_row_finite", f"sigma_row must be finite, got {self.sigma_row}")
        if effective_sigma(self.sigma_row) <= 0.0:
            raise ModelError("firm.sigma_zero", "all-zero sigma_row gives a degenerate diffusion")
        if not (self.x0 > self.threshold.log_kappa):
            raise ModelError(
                "firm.x0",
                f"x0={self.x0} must start above the boundary ln(kappa)={self.threshold.log_kappa}",
            )

    @property
    def sigma(self) -> float:
        """Effective volatility: Euclidean norm of ``sigma_row``."""
        return effective_sigma(self.sigma_row)


def effective_sigma(firm_or_row: FirmSpec | Sequence[float]) -> float:
    """Effective volatility of a firm (or of a raw factor row).

    Returns ``sqrt(sum_j row[j]**2)``; rejects an all-zero row because the
    bridge survival formula divides by it.
    """
    row = firm_or_row.sigma_row if isinstance(firm_or_row, FirmSpec) else tuple(firm_or_row)
    s = math.sqrt(math.fsum(v * v for v in row))
    if s <= 0.0:
        raise ModelError("firm.sigma_zero", "all-zero sigma_row gives a degenerate diffusion")
    return s


def sigma_rows_from_corr(
    sigma1: float, sigma2: float, rho: float
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Two-firm factor rows with given effective volatilities and correlation.

    Returns rows ``(sigma1, 0)`` and ``(rho*sigma2, sqrt(1-rho^2)*sigma2)``,
    the lower-triangular factorization whose product reproduces
    ``[[s1^2, rho*s1*s2], [rho*s1*s2, s2^2]]`` exactly.
    """
    if not (sigma1 > 0.0 and sigma2 > 0.0):
        raise ModelError("corr.sigma", "volatilities must be positive")
    if not abs(rho) < 1.0:
        raise ModelError("corr.rho", f"|rho| must be < 1 for a non-singular factorization, got {rho}")
    return (sigma1, 0.0), (rho * sigma2, math.sqrt(1.0 - rho * rho) * sigma2)


def _validate_corr_matrix(mat: np.ndarray, d: int, what: str) -> None:
    if mat.shape != (d, d):
        raise ModelError(f"{what}.shape", f"expected a {d}x{d} matrix, got {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ModelError(f"{what}.finite", "matrix entries must be finite")
    if not np.allclose(mat, mat.T, atol=0.0):
        raise ModelError(f"{what}.symmetry", "matrix must be symmetric")
    if not np.allclose(np.diag(mat), 1.0, atol=0.0):
        raise ModelError(f"{what}.diagonal", "matrix diagonal must be exactly 1")
    if np.any(np.abs(mat) > 1.0):
        raise ModelError(f"{what}.range", "matrix entries must lie in [-1, 1]")


@dataclass(frozen=True)
class MarketModel:
    """Joint model: firms, shock intensities, horizon, correlation inputs.

    ``bridge_correlations`` is the pairwise correlation applied to the
    crossing-time candidates of live firms within one inter-event segment.
    It is supplied as data (the no-jump diffusion correlation is the usual
    source for it) rather than derived at run time.  ``jump_correlations``
    optionally correlates jump sizes across firms at a common shock through
    a Gaussian copula; by default jump sizes are independent across firms.
    """

    firms: tuple[FirmSpec, ...]
    shock_intensities: tuple[float, ...]
    horizon: float
    bridge_correlations: tuple[tuple[float, ...], ...] | None = None
    jump_correlations: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "firms", tuple(self.firms))
        object.__setattr__(self, "shock_intensities", tuple(float(v) for v in self.shock_intensities))
        if not self.firms:
            raise ModelError("model.firms", "need at least one firm")
        if not (self.horizon > 0.0) or not math.isfinite(self.horizon):
            raise ModelError("model.horizon", f"horizon must be positive, got {self.horizon}")
        if any(not (lam > 0.0 and math.isfinite(lam)) for lam in self.shock_intensities):
            raise ModelError(
                "shock.intensity",
                f"all shock intensities must be positive, got {self.shock_intensities}",
            )
        d, m = len(self.firms), len(self.shock_intensities)
        for i, f in enumerate(self.firms):
            if len(f.sigma_row) != d:
                raise ModelError(
                    "firm.sigma_row_length",
                    f"firm {i}: sigma_row has length {len(f.sigma_row)}, expected {d} (one factor per firm)",
                )
            if len(f.jump_laws) != m:
                raise ModelError(
                    "firm.jump_laws_count",
                    f"firm {i}: {len(f.jump_laws)} jump laws, expected one per shock ({m})",
                )
        if self.bridge_correlations is None:
            ident = tuple(tuple(1.0 if i == j else 0.0 for j in range(d)) for i in range(d))
            object.__setattr__(self, "bridge_correlations", ident)
        else:
            mat = np.asarray(self.bridge_correlations, dtype=float)
            _validate_corr_matrix(mat, d, "bridge_corr")
            object.__setattr__(self, "bridge_correlations", tuple(tuple(r) for r in mat.tolist()))
        if self.jump_correlations is not None:
            mat = np.asarray(self.jump_correlations, dtype=float)
            _validate_corr_matrix(mat, d, "jump_corr")
            if np.min(np.linalg.eigvalsh(mat)) < -1e-10:
                raise ModelError("jump_corr.psd", "jump correlation matrix must be positive semi-definite")
            object.__setattr__(self, "jump_correlations", tuple(tuple(r) for r in mat.tolist()))

    @property
    def n_firms(self) -> int:
        return len(self.firms)

    @property
    def n_shocks(self) -> int:
        return len(self.shock_intensities)

    def sigma_matrix(self) -> np.ndarray:
        """Factor matrix with one row per firm (d x d)."""
        return np.array([f.sigma_row for f in self.firms], dtype=float)

    def firm_name(self, i: int) -> str:
        return self.firms[i].name or f"firm{i}"

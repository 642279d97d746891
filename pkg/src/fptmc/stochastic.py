"""Seeded sampling primitives for the Monte-Carlo engines.

Provides reproducible per-run random streams (counter-based, so any worker
can open any run's stream directly), Poisson jump schedules, merging of
per-shock schedules, correlated Brownian increments, correlated uniforms via
a sum-of-uniforms family, and jump-size draws.

Every operation takes a live ``numpy.random.Generator``; ``RngStream`` is the
(seed, stream_id) -> generator factory that pins the stream layout.  Two
executions that open the same (seed, stream_id) see bitwise-identical draw
sequences regardless of how runs are distributed over workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

__all__ = [
    "RngStream",
    "PhiloxStreams",
    "JumpSchedule",
    "SumOfUniformsTable",
    "default_sou_table",
    "sample_poisson_schedule",
    "merge_shock_schedules",
    "correlated_normals",
    "sou_correlated_uniforms",
    "sample_jump_sizes",
]

_U64 = 1 << 64


@dataclass(frozen=True)
class RngStream:
    """Address of one random stream: a 64-bit seed plus a 64-bit stream id.

    One stream per Monte-Carlo run.  Streams are keys of a counter-based
    generator (Philox), so opening stream ``(seed, k)`` never requires
    generating streams ``0..k-1`` first.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < _U64):
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not (0 <= self.stream_id < _U64):
            raise ValueError(f"stream_id must be an unsigned 64-bit integer, got {self.stream_id}")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


class PhiloxStreams:
    """Cheap per-run stream opener that recycles one bit-generator object.

    ``stream(k)`` yields draws bitwise-identical to
    ``RngStream(seed, k).generator()`` but skips the ~30us construction cost
    per run; the engines call it once per Monte-Carlo run.
    """

    def __init__(self, seed: int):
        if not (0 <= seed < _U64):
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._bitgen = np.random.Philox(key=np.array([seed, 0], dtype=np.uint64))
        self._gen = np.random.Generator(self._bitgen)
        self._counter = np.zeros(4, dtype=np.uint64)
        self._key = np.array([seed, 0], dtype=np.uint64)
        self._state = {
            "bit_generator": "Philox",
            "state": {"counter": self._counter, "key": self._key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }

    def stream(self, stream_id: int) -> np.random.Generator:
        # the state setter copies the arrays into the C-side state, so the
        # preallocated dict can be reused; counter must be re-zeroed because
        # draws advance it
        self._counter[:] = 0
        self._key[1] = stream_id
        self._bitgen.state = self._state
        return self._gen


@dataclass(frozen=True)
class JumpSchedule:
    """Merged jump instants over (0, T] with the shock type of each instant.

    ``shock_type`` is 1-based.  Instants are non-decreasing; exact ties
    across shocks (probability zero) are ordered by ascending shock index.
    """

    instants: np.ndarray
    shock_type: np.ndarray

    def __post_init__(self):
        instants = np.asarray(self.instants, dtype=float)
        types = np.asarray(self.shock_type, dtype=np.int64)
        if instants.shape != types.shape or instants.ndim != 1:
            raise ValueError("instants and shock_type must be 1-d arrays of equal length")
        if instants.size and np.any(np.diff(instants) < 0.0):
            raise ValueError("instants must be sorted ascending")
        object.__setattr__(self, "instants", instants)
        object.__setattr__(self, "shock_type", types)

    def __len__(self) -> int:
        return int(self.instants.size)


def _poisson_instants(scale: float, horizon: float, rng: np.random.Generator) -> list[float]:
    # Fixed block size keeps the draw count a deterministic function of the
    # accepted instants, independent of worker topology.
    out: list[float] = []
    t = 0.0
    while True:
        for gap in rng.standard_exponential(8).tolist():
            t += gap * scale
            if t > horizon:
                return out
            out.append(t)


def sample_poisson_schedule(
    lam: float,
    horizon: float,
    rng: np.random.Generator,
    *,
    mean_gap: float | None = None,
) -> np.ndarray:
    """Arrival instants of a Poisson process with intensity ``lam`` on (0, T].

    Gaps are i.i.d. exponential with mean ``1/lam``; instants beyond the
    horizon are discarded, so the result may be empty.  ``mean_gap``
    overrides the gap mean (the replication mode that fixes gaps at mean 1
    regardless of ``lam``).
    """
    if not lam > 0.0:
        raise ValueError(f"intensity must be positive, got {lam}")
    if not horizon > 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    scale = (1.0 / lam) if mean_gap is None else float(mean_gap)
    return np.array(_poisson_instants(scale, horizon, rng), dtype=float)


def merge_shock_schedules(per_shock: Sequence[np.ndarray]) -> JumpSchedule:
    """Merge per-shock instant vectors into one sorted schedule with types.

    Each input must be ascending.  Output length equals the sum of input
    lengths and ``shock_type[p]`` identifies the source vector (1-based) of
    ``instants[p]``; ties are broken by lower shock index first.
    """
    arrays = [np.asarray(a, dtype=float) for a in per_shock]
    for k, a in enumerate(arrays):
        if a.ndim != 1:
            raise ValueError(f"shock {k + 1}: schedule must be 1-d")
        if a.size and np.any(np.diff(a) < 0.0):
            raise ValueError(f"shock {k + 1}: instants must be ascending")
    if not arrays:
        return JumpSchedule(np.empty(0), np.empty(0, dtype=np.int64))
    instants = np.concatenate(arrays) if arrays else np.empty(0)
    types = np.concatenate(
        [np.full(a.size, k + 1, dtype=np.int64) for k, a in enumerate(arrays)]
    ) if arrays else np.empty(0, dtype=np.int64)
    order = np.argsort(instants, kind="stable")
    return JumpSchedule(instants[order], types[order])


def correlated_normals(
    cov_rows: Sequence[Sequence[float]] | np.ndarray,
    dt: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Correlated Brownian increments over ``dt`` from a factor matrix.

    Row ``i`` of ``cov_rows`` is firm i's factor loadings; the output is
    ``rows @ z * sqrt(dt)`` with ``z`` i.i.d. standard normal, so the output
    covariance is ``rows @ rows.T * dt``.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    rows = np.asarray(cov_rows, dtype=float)
    z = rng.standard_normal(rows.shape[1])
    return (rows @ z) * math.sqrt(dt)


class SumOfUniformsTable:
    """Calibrated map between the family parameter ``c`` and the pair correlation.

    The family draws a latent uniform ``W`` and returns
    ``U_i = frac(W + c*V_i)`` with independent uniform ``V_i``; every output
    is exactly uniform on [0,1) and every pair of outputs is exchangeable
    with a common correlation rho(c), which decreases monotonically from 1
    at ``c=0`` to exactly 0 at ``c=1``.  No closed form is trusted: the map
    is measured by brute force on a grid of ``c`` values, monotonically
    interpolated, and inverted by bisection.  Achieved correlations are
    within +-0.01 of the target.
    """

    def __init__(self, c_grid: Sequence[float], rho_grid: Sequence[float], meta: dict | None = None):
        c = np.asarray(c_grid, dtype=float)
        r = np.asarray(rho_grid, dtype=float)
        if c.size < 5 or c.shape != r.shape:
            raise ValueError("need matching c/rho grids with at least 5 points")
        if c[0] != 0.0 or c[-1] != 1.0 or np.any(np.diff(c) <= 0):
            raise ValueError("c grid must increase from 0 to 1")
        # Construction guarantees rho(0)=1 and rho(1)=0; pin the endpoints and
        # enforce monotonicity against measurement noise before interpolating.
        r = r.copy()
        r[0], r[-1] = 1.0, 0.0
        r = np.minimum.accumulate(r)
        r = np.clip(r, 0.0, 1.0)
        self.c_grid = c
        self.rho_grid = r
        self.meta = dict(meta or {})
        self._rho_of_c = PchipInterpolator(c, r)

    def rho_for_c(self, c: float) -> float:
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"c must lie in [0, 1], got {c}")
        return float(self._rho_of_c(c))

    def c_for_rho(self, rho: float) -> float:
        """Invert the map by bisection; rho must lie in [0, 1)."""
        if not 0.0 <= rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {rho}")
        if rho == 0.0:
            return 1.0  # exact independence by construction
        lo, hi = 0.0, 1.0  # rho decreases in c
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if self.rho_for_c(mid) > rho:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    @classmethod
    def build(
        cls,
        samples: int = 1_000_000,
        seed: int = 20240601,
        grid_step: float = 0.02,
    ) -> "SumOfUniformsTable":
        """Measure rho(c) by brute force on a uniform c grid."""
        rng = np.random.default_rng(seed)
        cs = np.round(np.arange(0.0, 1.0 + grid_step / 2, grid_step), 10)
        rhos = []
        for c in cs:
            w = rng.random(samples)
            u1 = (w + c * rng.random(samples)) % 1.0
            u2 = (w + c * rng.random(samples)) % 1.0
            rhos.append(float(np.corrcoef(u1, u2)[0, 1]))
        meta = {"samples": samples, "seed": seed, "grid_step": grid_step, "format": 1}
        return cls(cs, rhos, meta)

    def save(self, path) -> None:
        payload = {
            "format": 1,
            "meta": self.meta,
            "c": [float(v) for v in self.c_grid],
            "rho": [float(v) for v in self.rho_grid],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)

    @classmethod
    def load(cls, path_or_file) -> "SumOfUniformsTable":
        if hasattr(path_or_file, "read"):
            payload = json.load(path_or_file)
        else:
            with open(path_or_file, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        return cls(payload["c"], payload["rho"], payload.get("meta"))


_DEFAULT_TABLE: SumOfUniformsTable | None = None


def default_sou_table() -> SumOfUniformsTable:
    """The packaged calibration table (lazy-loaded once per process)."""
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        ref = resources.files("fptmc").joinpath("data/sou_table.json")
        with ref.open("r", encoding="utf-8") as fh:
            _DEFAULT_TABLE = SumOfUniformsTable.load(fh)
    return _DEFAULT_TABLE


def sou_correlated_uniforms(
    rho: float,
    count: int,
    rng: np.random.Generator,
    *,
    table: SumOfUniformsTable | None = None,
) -> np.ndarray:
    """Exchangeable uniforms on [0,1) with pairwise correlation ``rho``.

    Negative targets are rejected: the sum-of-uniforms family only reaches
    non-negative correlations.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    if count < 2:
        raise ValueError(f"count must be at least 2, got {count}")
    c = (table or default_sou_table()).c_for_rho(rho)
    w = rng.random()
    return (w + c * rng.random(count)) % 1.0


def sample_jump_sizes(
    laws: Sequence,
    rng: np.random.Generator,
    *,
    chol: np.ndarray | None = None,
) -> np.ndarray:
    """Jump sizes for every firm at one shock event.

    Draws ``Z_i ~ Normal(mu_z_i, sigma_z_i)`` per firm, independent across
    firms unless a Cholesky factor of a jump correlation matrix is supplied
    (Gaussian copula; marginals are unchanged).
    """
    if not laws:
        raise ValueError("need at least one jump law")
    z = rng.standard_normal(len(laws))
    if chol is not None:
        z = chol @ z
    means = np.array([law.mu_z for law in laws], dtype=float)
    stds = np.array([law.sigma_z for law in laws], dtype=float)
    return means + stds * z

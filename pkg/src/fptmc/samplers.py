"""The Monte-Carlo engines: discretized conventional and event-driven MUNIF.

Both engines consume a ``MarketModel`` and produce one ``RunOutcome`` per
Monte-Carlo run, each holding at most one weighted first-passage sample per
firm.  Runs are mutually independent: run ``r`` draws exclusively from the
counter-based stream ``(seed, r)``, so results are identical for any worker
count and are always reduced in ascending run order.

Per-run draw order (fixed; changing it changes every seeded result):

* both engines first draw the per-shock Poisson schedules in shock order;
* the conventional engine then draws the full step-grid normal block,
  followed by one d-vector of jump-size normals per merged jump instant;
* the event-driven engine walks the merged event list; per segment it draws
  one d-vector of diffusion normals, one d-vector of jump-size normals if
  the segment ends at a jump, and then the crossing-candidate uniforms for
  the live firms that need one (nothing, one scalar, or one vector of
  ``1 + n`` uniforms for the correlated family).

The event-driven engine never evaluates the process between events: between
jumps only the bridge crossing machinery from :mod:`fptmc.bridge` runs, so a
run costs O(jumps x firms) independent of any step size.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from typing import NamedTuple

import numpy as np

from .bridge import EPS_REJECT, BridgeSegment, crossing_probability
from .model import MarketModel
from .stochastic import (
    PhiloxStreams,
    _poisson_instants,
    default_sou_table,
    merge_shock_schedules,
    sample_poisson_schedule,
)

__all__ = [
    "SampleKind",
    "FptSample",
    "RunOutcome",
    "SegmentCase",
    "classify_segment",
    "simulate_conventional",
    "simulate_munif",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class SampleKind(Enum):
    """How a first-passage sample was produced (fixes its weight rule)."""

    INTERIOR = "interior"
    RIGHT_BOUNDARY = "right_boundary"


class FptSample(NamedTuple):
    """One weighted first-passage time.

    Interior samples carry the candidate importance weight (candidate
    interval length times the endpoint-conditional crossing density);
    boundary samples (a jump landing below the boundary, or a conventional
    grid-time default) carry weight 1.
    """

    firm: int
    time: float
    weight: float
    kind: SampleKind


class RunOutcome(NamedTuple):
    """Result of one Monte-Carlo run: per-firm optional samples.

    A firm has a sample exactly when it defaulted during the run.
    """

    run: int
    samples: tuple[FptSample | None, ...]

    @property
    def is_default(self) -> tuple[bool, ...]:
        return tuple(s is not None for s in self.samples)


class SegmentCase(Enum):
    """Endpoint classification of one bridge segment for one live firm."""

    INTERIOR_POSSIBLE = "interior_possible"
    SURVIVED = "survived"
    RIGHT_BOUNDARY_DEFAULT = "right_boundary_default"


def _classify(a: float, b: float, after: float, p_cross: float) -> SegmentCase:
    if a <= 0.0:
        raise ValueError(f"firm must be live at segment start, got start distance {a}")
    if p_cross < EPS_REJECT:
        return SegmentCase.RIGHT_BOUNDARY_DEFAULT if after < 0.0 else SegmentCase.SURVIVED
    if b > 0.0 and after < 0.0:
        return SegmentCase.RIGHT_BOUNDARY_DEFAULT
    return SegmentCase.INTERIOR_POSSIBLE


def classify_segment(seg: BridgeSegment, x_after: float) -> SegmentCase:
    """Classify a live firm's segment before any uniform is drawn.

    ``INTERIOR_POSSIBLE``: a crossing candidate decides (this includes the
    certain case where the pre-jump endpoint is already below the boundary,
    handled as an interior crossing with probability 1).
    ``RIGHT_BOUNDARY_DEFAULT``: the post-jump value is below the boundary,
    so if the bridge itself does not cross, the jump instant is the first
    passage time.  ``SURVIVED``: crossing is impossible at working precision
    and the jump leaves the firm above the boundary.
    """
    return _classify(seg.a, seg.b, x_after - seg.d_end, crossing_probability(seg))


class _EngineContext:
    """Per-model precomputation shared by every run of one simulation call."""

    def __init__(self, model: MarketModel, interjump_mean_one: bool):
        d = model.n_firms
        self.model = model
        self.d = d
        self.m = model.n_shocks
        self.horizon = model.horizon
        self.lams = model.shock_intensities
        self.mean_gap = 1.0 if interjump_mean_one else None
        self.gap_scales = tuple(
            1.0 if interjump_mean_one else 1.0 / lam for lam in self.lams
        )
        self.mu = tuple(f.mu for f in model.firms)
        self.rows = tuple(f.sigma_row for f in model.firms)
        self.sig = tuple(f.sigma for f in model.firms)
        self.sig2 = tuple(s * s for s in self.sig)
        self.gamma = tuple(f.threshold.gamma for f in model.firms)
        self.logk = tuple(f.threshold.log_kappa for f in model.firms)
        self.x0 = tuple(f.x0 for f in model.firms)
        # jump size laws, indexed [shock][firm]
        self.jmu = tuple(
            tuple(f.jump_laws[k].mu_z for f in model.firms) for k in range(self.m)
        )
        self.jsd = tuple(
            tuple(f.jump_laws[k].sigma_z for f in model.firms) for k in range(self.m)
        )
        if model.jump_correlations is not None:
            mat = np.asarray(model.jump_correlations)
            try:
                self.jump_chol = np.linalg.cholesky(mat)
            except np.linalg.LinAlgError:
                # singular PSD (e.g. comonotone): eigen-factorization
                w, v = np.linalg.eigh(mat)
                self.jump_chol = v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))
        else:
            self.jump_chol = None
        self.bridge_corr = model.bridge_correlations
        self._family_c: dict[tuple[int, ...], float] = {}
        self._table = None

    def family_c(self, firms: tuple[int, ...]) -> float:
        """Sum-of-uniforms parameter for a candidate family over ``firms``.

        Uses the pairwise bridge correlations; with more than two members
        the exchangeable family takes their mean.
        """
        c = self._family_c.get(firms)
        if c is None:
            pairs = [
                self.bridge_corr[i][j]
                for idx, i in enumerate(firms)
                for j in firms[idx + 1 :]
            ]
            rho = sum(pairs) / len(pairs)
            if rho < 0.0:
                raise ValueError(
                    f"negative bridge correlation {rho} is not reachable by the uniform family"
                )
            if rho >= 1.0:
                c = 0.0  # comonotone family
            else:
                if self._table is None:
                    self._table = default_sou_table()
                c = self._table.c_for_rho(rho)
            self._family_c[firms] = c
        return c


def _interior_weight(a: float, b: float, sig: float, tau: float, u: float, v: float) -> float:
    # candidate interval length times endpoint-conditional crossing density;
    # the 1/p factor is folded into the exponent so small p stays exact
    two_s2 = 2.0 * sig * sig
    expo = -a * a / (two_s2 * u) - b * b / (two_s2 * v)
    if b > 0.0:
        expo += (a + b) * (a + b) / (two_s2 * tau)
    else:
        expo += (b - a) * (b - a) / (two_s2 * tau)
    pref = a * math.sqrt(tau) / (sig * _SQRT_2PI * u * math.sqrt(u) * math.sqrt(v))
    return tau * pref * math.exp(min(expo, 0.0))


def _munif_run_single(ctx: _EngineContext, rng: np.random.Generator, run_idx: int) -> RunOutcome:
    # scalar-state variant of _munif_run for one-firm models (same draw layout
    # as the general path restricted to d = 1)
    horizon = ctx.horizon
    mu = ctx.mu[0]
    sig = ctx.sig[0]
    sig2 = ctx.sig2[0]
    srow = ctx.rows[0][0]
    gamma = ctx.gamma[0]
    logk = ctx.logk[0]
    jmu = tuple(v[0] for v in ctx.jmu)
    jsd = tuple(v[0] for v in ctx.jsd)

    if ctx.m == 0:
        times: list[float] = []
        types: list[int] = []
    elif ctx.m == 1:
        times = _poisson_instants(ctx.gap_scales[0], horizon, rng)
        types = [1] * len(times)
    else:
        tagged: list[tuple[float, int]] = []
        for k, scale in enumerate(ctx.gap_scales):
            tagged.extend((t, k + 1) for t in _poisson_instants(scale, horizon, rng))
        tagged.sort()
        times = [p[0] for p in tagged]
        types = [p[1] for p in tagged]

    n_events = len(times)
    # one bulk draw per kind for the whole run (cheaper than per-segment calls)
    zs = rng.standard_normal(2 * n_events + 2).tolist()
    us = rng.random(n_events + 1).tolist()
    zi = 0
    ui = 0

    x = ctx.x0[0]
    t0 = 0.0
    sample = None
    for j in range(n_events + 1):
        is_jump = j < n_events
        t1 = times[j] if is_jump else horizon
        tau = t1 - t0
        if tau > 0.0:
            x_end = x + mu * tau + srow * zs[zi] * math.sqrt(tau)
            zi += 1
        else:
            x_end = x
        if is_jump:
            k = types[j] - 1
            x_after = x_end + jmu[k] + jsd[k] * zs[zi]
            zi += 1
        else:
            x_after = x_end
        if tau > 0.0:
            dlvl1 = gamma * t1 + logk
            a = x - (gamma * t0 + logk)
            b = x_end - dlvl1
            after = x_after - dlvl1
            if a <= 0.0:
                sample = FptSample(0, t0, 1.0, SampleKind.RIGHT_BOUNDARY)
                break
            p = 1.0 if b <= 0.0 else math.exp(-2.0 * a * b / (tau * sig2))
            if p >= EPS_REJECT:
                s = t0 + (tau / p) * us[ui]
                ui += 1
                if s < t1:
                    if s <= t0:
                        s = t0 + tau * 1e-12
                    wgt = _interior_weight(a, b, sig, tau, s - t0, t1 - s)
                    sample = FptSample(0, s, wgt, SampleKind.INTERIOR)
                    break
            if after < 0.0:
                sample = FptSample(0, t1, 1.0, SampleKind.RIGHT_BOUNDARY)
                break
        elif is_jump:
            dlvl1 = gamma * t1 + logk
            if x_after - dlvl1 < 0.0 and x - dlvl1 > 0.0:
                sample = FptSample(0, t1, 1.0, SampleKind.RIGHT_BOUNDARY)
                break
        x = x_after
        t0 = t1

    return RunOutcome(run_idx, (sample,))


def _munif_run(ctx: _EngineContext, rng: np.random.Generator, run_idx: int) -> RunOutcome:
    d = ctx.d
    horizon = ctx.horizon
    # merged event schedule as plain lists (hot path: avoid array overhead)
    if ctx.m == 0:
        times: list[float] = []
        types: list[int] = []
    elif ctx.m == 1:
        times = _poisson_instants(ctx.gap_scales[0], horizon, rng)
        types = [1] * len(times)
    else:
        tagged: list[tuple[float, int]] = []
        for k, scale in enumerate(ctx.gap_scales):
            tagged.extend(
                (t, k + 1) for t in _poisson_instants(scale, horizon, rng)
            )
        tagged.sort()  # tuple order breaks exact ties by lower shock index
        times = [p[0] for p in tagged]
        types = [p[1] for p in tagged]
    n_events = len(times)

    mu, rows, sig, sig2 = ctx.mu, ctx.rows, ctx.sig, ctx.sig2
    gamma, logk = ctx.gamma, ctx.logk
    x = list(ctx.x0)
    samples: list[FptSample | None] = [None] * d
    alive = list(range(d))
    t0 = 0.0

    for j in range(n_events + 1):
        if not alive:
            break
        is_jump = j < n_events
        t1 = times[j] if is_jump else horizon
        tau = t1 - t0
        x_end = x
        if tau > 0.0:
            sqt = math.sqrt(tau)
            x_end = x[:]
            z = rng.standard_normal(d).tolist()
            for i in alive:
                row = rows[i]
                inc = 0.0
                for jj in range(d):
                    inc += row[jj] * z[jj]
                x_end[i] = x[i] + mu[i] * tau + inc * sqt
        if is_jump:
            k = types[j] - 1
            jmu, jsd = ctx.jmu[k], ctx.jsd[k]
            x_after = x_end[:]
            zj = rng.standard_normal(d)
            if ctx.jump_chol is not None:
                zj = ctx.jump_chol @ zj
            zj = zj.tolist()
            for i in alive:
                x_after[i] = x_end[i] + jmu[i] + jsd[i] * zj[i]
        else:
            x_after = x_end

        if tau > 0.0:
            # classify live firms; collect those needing a crossing candidate
            cand: list[tuple[int, float, float, float, float]] = []
            for i in alive:
                dlvl1 = gamma[i] * t1 + logk[i]
                a = x[i] - (gamma[i] * t0 + logk[i])
                b = x_end[i] - dlvl1
                after = x_after[i] - dlvl1
                if a <= 0.0:
                    # measure-zero guard: start point sits on the boundary
                    samples[i] = FptSample(i, t0, 1.0, SampleKind.RIGHT_BOUNDARY)
                    continue
                p = 1.0 if b <= 0.0 else math.exp(-2.0 * a * b / (tau * sig2[i]))
                if p < EPS_REJECT:
                    if after < 0.0:
                        samples[i] = FptSample(i, t1, 1.0, SampleKind.RIGHT_BOUNDARY)
                    continue
                cand.append((i, a, b, p, after))
            nc = len(cand)
            if nc == 1:
                ys = (rng.random(),)
            elif nc >= 2:
                arr = rng.random(nc + 1).tolist()
                w = arr[0]
                c = ctx.family_c(tuple(item[0] for item in cand))
                ys = tuple((w + c * arr[kk + 1]) % 1.0 for kk in range(nc))
            else:
                ys = ()
            for (i, a, b, p, after), y in zip(cand, ys):
                s = t0 + (tau / p) * y
                if s < t1:
                    if s <= t0:  # y rounded to 0; nudge into the open segment
                        s = t0 + tau * 1e-12
                    wgt = _interior_weight(a, b, sig[i], tau, s - t0, t1 - s)
                    samples[i] = FptSample(i, s, wgt, SampleKind.INTERIOR)
                elif after < 0.0:
                    samples[i] = FptSample(i, t1, 1.0, SampleKind.RIGHT_BOUNDARY)
        elif is_jump:
            # zero-length segment (tied instants): only the jump can default
            for i in alive:
                dlvl1 = gamma[i] * t1 + logk[i]
                if x_after[i] - dlvl1 < 0.0 and x[i] - dlvl1 > 0.0:
                    samples[i] = FptSample(i, t1, 1.0, SampleKind.RIGHT_BOUNDARY)

        if samples.count(None) != len(alive):
            alive = [i for i in alive if samples[i] is None]
        if alive and x_after is not x:
            for i in alive:
                x[i] = x_after[i]
        t0 = t1

    return RunOutcome(run_idx, tuple(samples))


class _ConventionalGrid:
    """Step grid and boundary values shared by all conventional runs."""

    def __init__(self, ctx: _EngineContext, delta: float):
        if not delta > 0.0:
            raise ValueError(f"delta must be positive, got {delta}")
        n = int(round(ctx.horizon / delta))
        if n < 2:
            raise ValueError(
                f"delta={delta} must divide the horizon {ctx.horizon} into at least 2 steps"
            )
        self.n = n
        self.dt = ctx.horizon / n
        self.sqdt = math.sqrt(self.dt)
        self.t = np.linspace(self.dt, ctx.horizon, n)  # step-end times
        gam = np.asarray(ctx.gamma)
        logk = np.asarray(ctx.logk)
        self.boundary = self.t[:, None] * gam[None, :] + logk[None, :]
        self.mu_t = self.t[:, None] * np.asarray(ctx.mu)[None, :]
        self.x0 = np.asarray(ctx.x0)
        self.sigT = np.asarray(ctx.rows, dtype=float).T


def _conventional_run(
    ctx: _EngineContext, grid: _ConventionalGrid, rng: np.random.Generator, run_idx: int
) -> RunOutcome:
    per_shock = [
        sample_poisson_schedule(lam, ctx.horizon, rng, mean_gap=ctx.mean_gap)
        for lam in ctx.lams
    ]
    sched = merge_shock_schedules(per_shock)

    z = rng.standard_normal((grid.n, ctx.d))
    path = grid.x0[None, :] + grid.mu_t + np.cumsum(z @ grid.sigT, axis=0) * grid.sqdt
    for u, k in zip(sched.instants, sched.shock_type):
        zj = rng.standard_normal(ctx.d)
        if ctx.jump_chol is not None:
            zj = ctx.jump_chol @ zj
        y = np.asarray(ctx.jmu[k - 1]) + np.asarray(ctx.jsd[k - 1]) * zj
        idx = int(math.ceil(u / grid.dt))
        path[idx - 1 :, :] += y[None, :]

    below = path <= grid.boundary
    hit = below.any(axis=0)
    first = below.argmax(axis=0)
    samples: list[FptSample | None] = [None] * ctx.d
    for i in range(ctx.d):
        if hit[i]:
            samples[i] = FptSample(i, float(grid.t[first[i]]), 1.0, SampleKind.RIGHT_BOUNDARY)
    return RunOutcome(run_idx, tuple(samples))


def _run_range(
    model: MarketModel,
    method: str,
    delta: float | None,
    seed: int,
    start: int,
    stop: int,
    interjump_mean_one: bool,
) -> list[RunOutcome]:
    ctx = _EngineContext(model, interjump_mean_one)
    streams = PhiloxStreams(seed)
    if method == "munif":
        run = _munif_run_single if ctx.d == 1 else _munif_run
        stream = streams.stream
        return [run(ctx, stream(r), r) for r in range(start, stop)]
    grid = _ConventionalGrid(ctx, delta)
    return [_conventional_run(ctx, grid, streams.stream(r), r) for r in range(start, stop)]


def _simulate(
    model: MarketModel,
    method: str,
    delta: float | None,
    runs: int,
    seed: int,
    workers: int,
    interjump_mean_one: bool,
) -> list[RunOutcome]:
    if runs <= 0:
        raise ValueError(f"runs must be positive, got {runs}")
    if workers <= 1 or runs < 64:
        return _run_range(model, method, delta, seed, 0, runs, interjump_mean_one)
    n_chunks = min(workers * 4, runs)
    bounds = np.linspace(0, runs, n_chunks + 1).astype(int)
    out: list[RunOutcome] = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(
                _run_range, model, method, delta, seed, int(lo), int(hi), interjump_mean_one
            )
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        for fut in futures:  # submission order == ascending run order
            out.extend(fut.result())
    return out


def simulate_conventional(
    model: MarketModel,
    delta: float,
    runs: int,
    seed: int,
    *,
    workers: int = 1,
    interjump_mean_one: bool = False,
) -> list[RunOutcome]:
    """Discretized Euler simulation of every firm on a fixed step grid.

    Each step adds the drift, the correlated diffusion increment, and any
    jumps whose instants fall inside the step (applied at the step end).  A
    firm defaults at the first grid time where its value is at or below the
    boundary; that grid time is recorded with weight 1.
    """
    return _simulate(model, "conventional", delta, runs, seed, workers, interjump_mean_one)


def simulate_munif(
    model: MarketModel,
    runs: int,
    seed: int,
    *,
    workers: int = 1,
    interjump_mean_one: bool = False,
) -> list[RunOutcome]:
    """Event-driven simulation: the process is evaluated only at jump times.

    Per run: draw and merge the per-shock jump schedules; walk the segments
    between consecutive events, drawing correlated pre-jump endpoints and
    applying the jump sizes of the event's shock type; for each live firm
    resolve the segment through the bridge crossing rules (interior
    crossing-time candidate fed with correlated uniforms across live firms,
    survival, or default at the jump instant when the jump lands below the
    boundary).  The final segment runs from the last event to the horizon
    with no terminal jump.  Defaulted firms are never re-examined within a
    run.
    """
    return _simulate(model, "munif", None, runs, seed, workers, interjump_mean_one)

"""Brownian-bridge mathematics between consecutive jump events.

Between two events the (drifted) log-value process, conditioned on its two
endpoint values, is a Brownian bridge; subtracting the linear boundary turns
level crossing into a zero crossing of another Brownian bridge, so only the
endpoint distances ``a = x_start - d_start`` and ``b = x_end - d_end``
matter.  This module provides the segment survival probability, the
first-crossing-time density (both the endpoint-conditional form whose mass
is the crossing probability, and the normalized conditional-on-crossing
form), and the uniform crossing-time candidate with its importance weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

from scipy.integrate import quad

__all__ = [
    "EPS_REJECT",
    "BridgeSegment",
    "survival_probability",
    "crossing_probability",
    "crossing_density",
    "conditional_crossing_density",
    "crossing_candidate",
    "candidate_weight",
]

# Crossing probabilities below this are treated as "segment survived": the
# uniform candidate interval would be ~1e12 times the segment and the
# neglected mass per segment is below this bound.
EPS_REJECT = 1e-12

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class BridgeSegment:
    """One inter-event segment with its endpoint values and boundary levels.

    ``x_start``/``x_end`` are the process values just after the previous
    event and just before the next one; ``d_start``/``d_end`` are the
    boundary levels at the two endpoints.  The derived distances ``a`` and
    ``b`` are stored alongside.
    """

    t_start: float
    t_end: float
    x_start: float
    x_end: float
    d_start: float
    d_end: float
    sigma: float
    a: float = field(init=False)
    b: float = field(init=False)

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError(f"need t_end > t_start, got [{self.t_start}, {self.t_end}]")
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "a", self.x_start - self.d_start)
        object.__setattr__(self, "b", self.x_end - self.d_end)

    @property
    def tau(self) -> float:
        return self.t_end - self.t_start


def survival_probability(seg: BridgeSegment) -> float:
    """Probability that the bridge stays above the boundary on the segment.

    Requires both endpoints strictly above the boundary; returns
    ``1 - exp(-2ab / (tau sigma^2))``.  When an endpoint sits on or below
    the boundary the caller must use the endpoint rules instead (crossing is
    then certain).
    """
    if seg.a <= 0.0 or seg.b <= 0.0:
        raise ValueError(
            f"survival probability needs both endpoint distances positive, got a={seg.a}, b={seg.b}"
        )
    return 1.0 - math.exp(-2.0 * seg.a * seg.b / (seg.tau * seg.sigma * seg.sigma))


def crossing_probability(seg: BridgeSegment) -> float:
    """Probability that the bridge touches the boundary within the segment.

    Complement of :func:`survival_probability`, extended to the certain
    cases: 1 when the terminal endpoint is on or below the boundary.  The
    start point must be strictly above (a live firm).
    """
    if seg.a <= 0.0:
        raise ValueError(f"segment must start above the boundary, got a={seg.a}")
    if seg.b <= 0.0:
        return 1.0
    return math.exp(-2.0 * seg.a * seg.b / (seg.tau * seg.sigma * seg.sigma))


def crossing_density(seg: BridgeSegment, s: float) -> float:
    """Endpoint-conditional first-crossing density at time ``s``.

    Density of the first boundary touch given the segment endpoints (not
    conditioned on touching): its integral over the open segment equals
    :func:`crossing_probability`.  Derived by the strong Markov
    decomposition: first-hit density from distance ``a``, times the free
    transition density from the boundary to the terminal point, divided by
    the endpoint transition density.
    """
    if seg.a <= 0.0:
        raise ValueError(f"segment must start above the boundary, got a={seg.a}")
    if not (seg.t_start < s < seg.t_end):
        raise ValueError(f"s={s} outside the open segment ({seg.t_start}, {seg.t_end})")
    a, b, sig, tau = seg.a, seg.b, seg.sigma, seg.tau
    u = s - seg.t_start
    v = seg.t_end - s
    two_s2 = 2.0 * sig * sig
    expo = -a * a / (two_s2 * u) - b * b / (two_s2 * v) + (b - a) * (b - a) / (two_s2 * tau)
    pref = a * math.sqrt(tau) / (sig * _SQRT_2PI * u * math.sqrt(u) * math.sqrt(v))
    return pref * math.exp(min(expo, 0.0))


@lru_cache(maxsize=4096)
def _crossing_mass_quadrature(seg: BridgeSegment) -> float:
    # Normalizer computed numerically rather than from the closed form, as a
    # guard against transcription errors in the density formula.
    mid = [seg.t_start + f * seg.tau for f in (1e-4, 0.25, 0.5, 0.75, 1.0 - 1e-4)]
    val, _ = quad(
        lambda s: crossing_density(seg, s),
        seg.t_start,
        seg.t_end,
        points=mid,
        limit=200,
        epsabs=1e-14,
        epsrel=1e-10,
    )
    return val


def conditional_crossing_density(seg: BridgeSegment, s: float) -> float:
    """First-crossing-time density conditioned on crossing within the segment.

    :func:`crossing_density` normalized to unit mass over the open segment;
    the normalizer is obtained by adaptive quadrature (relative tolerance
    1e-8 or better).
    """
    mass = _crossing_mass_quadrature(seg)
    if mass <= 0.0:
        raise ValueError("crossing probability is zero; conditional density undefined")
    return crossing_density(seg, s) / mass


def crossing_candidate(seg: BridgeSegment, y: float) -> float | None:
    """Uniform crossing-time candidate for the segment.

    Maps a uniform ``y`` in [0,1) to ``s = t_start + y * tau / p`` where
    ``p`` is the crossing probability, so that ``{s <= t_end}`` occurs with
    probability exactly ``p``; a candidate beyond ``t_end`` means no
    crossing happened in the segment.  Returns ``None`` when the crossing
    probability is below ``EPS_REJECT`` (segment treated as survived).
    """
    if not 0.0 <= y < 1.0:
        raise ValueError(f"y must lie in [0, 1), got {y}")
    p = crossing_probability(seg)
    if p < EPS_REJECT:
        return None
    return seg.t_start + (seg.tau / p) * y


def candidate_weight(seg: BridgeSegment, s: float) -> float:
    """Importance weight of an accepted interior crossing candidate.

    Equals ``(tau / p) * crossing_density(seg, s)``, i.e. the candidate
    interval length times the endpoint-conditional crossing density, which
    is also ``tau`` times the conditional-on-crossing density.  Computed in
    a combined form so small crossing probabilities do not lose precision.
    """
    if not (seg.t_start < s < seg.t_end):
        raise ValueError(f"s={s} outside the open segment ({seg.t_start}, {seg.t_end})")
    a, b, sig, tau = seg.a, seg.b, seg.sigma, seg.tau
    if a <= 0.0:
        raise ValueError(f"segment must start above the boundary, got a={a}")
    u = s - seg.t_start
    v = seg.t_end - s
    two_s2 = 2.0 * sig * sig
    expo = -a * a / (two_s2 * u) - b * b / (two_s2 * v)
    if b > 0.0:
        # dividing by p = exp(-2ab/(tau sigma^2)) turns (b-a)^2 into (a+b)^2
        expo += (a + b) * (a + b) / (two_s2 * tau)
    else:
        expo += (b - a) * (b - a) / (two_s2 * tau)
    pref = a * math.sqrt(tau) / (sig * _SQRT_2PI * u * math.sqrt(u) * math.sqrt(v))
    return tau * pref * math.exp(min(expo, 0.0))

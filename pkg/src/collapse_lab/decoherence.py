"""Stochastic sector-amplitude dynamics under a stream of collisions.

Each sector k of the apparatus carries, per measurement channel j, a
coherent amplitude a_kj (1 at t=0) and an incoherent accumulator b_kj
(0 at t=0).  Collisions arrive at rate flux*sigma; over a step dt the
coherent amplitude takes a deterministic drift a -> a*sqrt(1 - rate*dt)
plus zero-mean jitter calibrated so the ensemble mean of (delta a)^2
equals rate*dt, and b gains an independent complex increment of matching
mean square with uniformly random phase.  The two channels receive
independent draws (the pointer positions are far enough apart that their
collision amplitudes are out of phase).

The reduced 2x2 pointer matrix keeps its diagonal pinned at the channel
weights (the pointer position is conserved by collisions, so no weight
moves between channels in this module), while its off-diagonal element
sum_k p_k a_k1 a_k2 decays at the collision rate.  The b accumulators
never enter the off-diagonal element; they are retained for norm
bookkeeping only.

Note the jitter mandated by the second-moment contract means individual
a_kj random-walk around the decaying drift envelope; the (0, 1] range and
monotone decrease hold for the envelope and the ensemble mean, not per
sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DensityMatrix, ValidationError

__all__ = [
    "StepSizeError",
    "CollisionStream",
    "PointerChannelAmplitudes",
    "step_sector_ensemble",
    "reduced_pointer_matrix",
    "decay_rate_fit",
]

MAGNITUDE_FLOOR = 1e-300


class StepSizeError(ValueError):
    """Time step too large for the rate approximation."""


@dataclass(frozen=True)
class CollisionStream:
    """Poisson stream of environmental collisions.

    flux          : incoming molecules per area per time
    cross_section : total collision cross section (area)
    separation_ok : declares the pointer positions far apart compared with
                    the molecular de Broglie wavelength, so the two
                    channels decohere independently
    """

    flux: float
    cross_section: float
    separation_ok: bool = True

    def __post_init__(self):
        if self.flux < 0 or self.cross_section < 0:
            raise ValidationError("flux and cross section must be non-negative")

    @property
    def rate(self) -> float:
        return self.flux * self.cross_section


class PointerChannelAmplitudes:
    """Per-sector, per-channel amplitude state of the pointer ensemble."""

    def __init__(self, channel_amps, sector_weights, a=None, b=None, time=0.0):
        c = np.asarray(channel_amps, dtype=np.complex128)
        if c.shape != (2,):
            raise ValidationError("exactly two channel amplitudes required")
        if abs(np.sum(np.abs(c) ** 2) - 1.0) > 1e-12:
            raise ValidationError("channel weights |c1|^2 + |c2|^2 must sum to 1")
        p = np.asarray(sector_weights, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
            raise ValidationError("sector weights must be non-negative and sum to 1")
        K = p.size
        self.c = c
        self.sector_weights = p
        self.a = np.ones((K, 2)) if a is None else np.asarray(a, dtype=float)
        self.b = np.zeros((K, 2), dtype=np.complex128) if b is None else np.asarray(b, dtype=np.complex128)
        if self.a.shape != (K, 2) or self.b.shape != (K, 2):
            raise ValidationError("a and b must have shape (K, 2)")
        self.time = float(time)

    @property
    def K(self) -> int:
        return self.sector_weights.size

    @property
    def channel_weights(self) -> np.ndarray:
        return np.abs(self.c) ** 2


def step_sector_ensemble(state, stream, dt, rng, step_cap=0.1,
                         explicit_events=False, event_scale=0.01):
    """Advance every sector/channel amplitude by one collision step.

    Default mode treats arrivals as a continuous rate.  With
    ``explicit_events=True`` the number of collisions in dt is drawn from
    a Poisson law (event_scale fixes the per-collision mean square), which
    exists purely to cross-validate the rate approximation.
    """
    rdt = stream.rate * dt
    if rdt >= step_cap:
        raise StepSizeError(f"rate*dt = {rdt:.3g} exceeds the step cap {step_cap}")
    K = state.K
    if rdt == 0.0:
        return PointerChannelAmplitudes(state.c, state.sector_weights,
                                        a=state.a.copy(), b=state.b.copy(),
                                        time=state.time + dt)
    if explicit_events:
        n = rng.poisson(rdt / event_scale, (K, 2))
        drift = (1.0 - event_scale) ** (0.5 * n)
        var = n * event_scale
    else:
        drift = np.sqrt(1.0 - rdt)
        var = rdt
    # draw order is fixed: a-jitter for both channels, then b increments
    a = state.a * drift + rng.standard_normal((K, 2)) * np.sqrt(var)
    zb = rng.standard_normal((K, 2)) + 1j * rng.standard_normal((K, 2))
    b = state.b + zb * np.sqrt(var / 2.0)
    return PointerChannelAmplitudes(state.c, state.sector_weights, a=a, b=b,
                                    time=state.time + dt)


def reduced_pointer_matrix(state) -> DensityMatrix:
    """Reduced 2x2 pointer matrix of the current amplitude state.

    The diagonal is the conserved channel weights; only the coherent parts
    a_k1 a_k2 survive in the off-diagonal scalar product, the incoherent
    accumulators averaging to zero there.
    """
    w = state.channel_weights
    overlap = np.sum(state.sector_weights * state.a[:, 0] * state.a[:, 1])
    off = state.c[0] * np.conj(state.c[1]) * overlap
    rho = np.array([[w[0], off], [np.conj(off), w[1]]], dtype=np.complex128)
    return DensityMatrix(rho)


def decay_rate_fit(times, magnitudes, floor=MAGNITUDE_FLOOR):
    """Least-squares decay rate of a positive magnitude series.

    Fits log(magnitude) against time and returns ``(rate, stderr)`` with
    rate = -slope.  The series is truncated at the first magnitude at or
    below ``floor`` (fully decohered).  Requires at least 20 points
    spanning at least two e-folds.
    """
    t = np.asarray(times, dtype=float)
    m = np.asarray(magnitudes, dtype=float)
    if t.shape != m.shape or t.ndim != 1:
        raise ValidationError("times and magnitudes must be 1-d arrays of equal length")
    dead = np.nonzero(m <= floor)[0]
    if dead.size:
        t, m = t[: dead[0]], m[: dead[0]]
    if t.size < 20:
        raise ValidationError(f"need at least 20 usable points, have {t.size}")
    y = np.log(m)
    if y[0] - y[-1] < 2.0:
        raise ValidationError(f"series spans only {y[0] - y[-1]:.2f} e-folds, need >= 2")
    n = t.size
    tbar = t.mean()
    sxx = np.sum((t - tbar) ** 2)
    slope = np.sum((t - tbar) * (y - y.mean())) / sxx
    resid = y - (y.mean() + slope * (t - tbar))
    var = np.sum(resid**2) / max(n - 2, 1)
    stderr = float(np.sqrt(var / sxx))
    return -float(slope), stderr

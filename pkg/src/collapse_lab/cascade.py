"""Entanglement cascade in small frontier regions and its fluctuations.

A region just outside the reactive zone starts almost unentangled: a few
atoms arriving from the reactive side carry channel-1 or channel-2
entanglement with total initial weight eps << 1, while weight 1 - eps is
still idle.  Atom-atom collisions spread the entanglement autocatalytically:

    dq0/dt = -q0 (q1 + q2) / tau
    dq1/dt =  q0 q1 / tau
    dq2/dt =  q0 q2 / tau

with tau the mean free collision time.  The closed-form solution drives q0
to zero and amplifies the initial shares to q_j -> dq_j / eps, i.e. the
region ends up entangled in the ratio set by its handful of seed atoms.
Because those atoms are a small random sample, the amplified shares
fluctuate region to region; summing over the regions the frontier sweeps
during one crossing interval gives the channel-probability fluctuations
that ultimately drive reduction.

Fluctuation statistics follow from exact few-atom sampling (Poisson count,
binomial channel labels) rather than any heuristic scaling: a region with
n > 0 atoms, m of them channel-1, contributes dp_beta1 = m/n - p1, whose
variance is p1 p2 E[1/n | n >= 1], testable against direct enumeration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import ValidationError

__all__ = [
    "AccuracyWarning",
    "AccuracyError",
    "CascadeState",
    "FrontierModel",
    "cascade_closed_form",
    "cascade_integrate",
    "cascade_trajectory",
    "sample_beta_fluctuations",
    "aggregate_frontier",
]


class AccuracyWarning(UserWarning):
    pass


class AccuracyError(ValueError):
    pass


@dataclass(frozen=True)
class CascadeState:
    """Occupation probabilities of one frontier region.

    q0, q1, q2 : idle, channel-1-entangled, channel-2-entangled fractions
    tau        : mean free collision time
    eps        : initial entangled fraction, q1(0) + q2(0)
    """

    q0: float
    q1: float
    q2: float
    tau: float
    eps: float

    def __post_init__(self):
        if self.tau <= 0:
            raise ValidationError("mean free collision time must be positive")
        if min(self.q0, self.q1, self.q2) < 0:
            raise ValidationError("occupations must be non-negative")
        if abs(self.q0 + self.q1 + self.q2 - 1.0) > 1e-12:
            raise ValidationError("occupations must sum to 1 within 1e-12")
        if not 0.0 <= self.eps < 1.0:
            raise ValidationError("entangled fraction must lie in [0, 1)")

    @property
    def occupations(self) -> np.ndarray:
        return np.array([self.q0, self.q1, self.q2])


@dataclass(frozen=True)
class FrontierModel:
    """One-dimensional frontier sweeping equal-size regions.

    The frontier between the reactive zone and the background advances at
    v = 2*sqrt(D/tau); each of the n_regions regions of size region_size
    is crossed in crossing_dt = region_size / v.
    """

    diffusion_coeff: float
    tau: float
    n_regions: int
    region_size: float = 1.0

    def __post_init__(self):
        if self.diffusion_coeff <= 0 or self.tau <= 0 or self.region_size <= 0:
            raise ValidationError("diffusion coefficient, tau and region size must be positive")
        if self.n_regions < 1:
            raise ValidationError("need at least one region")

    @property
    def velocity(self) -> float:
        return 2.0 * np.sqrt(self.diffusion_coeff / self.tau)

    @property
    def crossing_dt(self) -> float:
        return self.region_size / self.velocity


def cascade_closed_form(t, eps, dq1, dq2, tau) -> CascadeState:
    """Exact solution of the cascade equations at time t.

        q0(t) = (1-eps) e^(-t/tau) / [eps + (1-eps) e^(-t/tau)]
        qj(t) = dq_j / [eps + (1-eps) e^(-t/tau)]

    dq1, dq2 are the initial channel shares with dq1 + dq2 = eps.  The
    eps = 0 limit is exact: q0 stays 1 forever.
    """
    if t < 0:
        raise ValidationError("time must be non-negative")
    if tau <= 0:
        raise ValidationError("tau must be positive")
    if not 0.0 <= eps < 1.0:
        raise ValidationError("eps must lie in [0, 1)")
    if dq1 < 0 or dq2 < 0 or abs(dq1 + dq2 - eps) > 1e-12:
        raise ValidationError("initial shares must be non-negative and sum to eps")
    if eps == 0.0:
        return CascadeState(1.0, 0.0, 0.0, tau, 0.0)
    decay = np.exp(-t / tau)
    den = eps + (1.0 - eps) * decay
    return CascadeState((1.0 - eps) * decay / den, dq1 / den, dq2 / den, tau, eps)


def _cascade_rhs(q, tau):
    q0, q1, q2 = q
    return np.array([-q0 * (q1 + q2), q0 * q1, q0 * q2]) / tau


def cascade_integrate(initial: CascadeState, t_end, steps, strict=False) -> CascadeState:
    """Fixed-step fourth-order (classical Runge-Kutta) integration.

    The simplex sum is a linear invariant of the equations and is preserved
    by the scheme to roundoff.  A step size above tau/10 triggers an
    accuracy warning, escalated to AccuracyError when ``strict``.
    """
    if steps < 10:
        raise ValidationError(f"need at least 10 steps, got {steps}")
    if t_end < 0:
        raise ValidationError("t_end must be non-negative")
    h = t_end / steps
    if h > initial.tau / 10.0:
        msg = f"step {h:.3g} exceeds tau/10 = {initial.tau / 10:.3g}; accuracy degraded"
        if strict:
            raise AccuracyError(msg)
        warnings.warn(msg, AccuracyWarning)
    q = initial.occupations
    tau = initial.tau
    for _ in range(steps):
        k1 = _cascade_rhs(q, tau)
        k2 = _cascade_rhs(q + 0.5 * h * k1, tau)
        k3 = _cascade_rhs(q + 0.5 * h * k2, tau)
        k4 = _cascade_rhs(q + h * k3, tau)
        q = q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if abs(q.sum() - 1.0) > 1e-10:
        raise AccuracyError(f"simplex drift {abs(q.sum() - 1.0):.3e} exceeds 1e-10")
    # re-center the idle component so the state validates at 1e-12; clamp
    # the roundoff-negative case when the cascade has essentially finished
    q0 = max(1.0 - q[1] - q[2], 0.0)
    return CascadeState(q0, q[1], q[2], tau, initial.eps)


def cascade_trajectory(initial: CascadeState, t_end, steps, n_samples=101, strict=False):
    """Sampled (t, q0, q1, q2) curve of the integrated cascade."""
    ts = np.linspace(0.0, t_end, n_samples)
    rows = np.empty((n_samples, 4))
    rows[0] = [0.0, initial.q0, initial.q1, initial.q2]
    per = max(int(np.ceil(steps / max(n_samples - 1, 1))), 10)
    state = initial
    for i in range(1, n_samples):
        state = cascade_integrate(state, ts[i] - ts[i - 1], per, strict=strict)
        rows[i] = [ts[i], state.q0, state.q1, state.q2]
    return rows


def sample_beta_fluctuations(channel_probs, n_atoms_mean, n_regions, rng):
    """Centered channel fluctuations of n_regions independent regions.

    Each region receives a Poisson(n_atoms_mean) number of seed atoms, each
    labeled channel-1 with probability p1.  The cascade amplifies the seed
    shares to the region's asymptotic channel weights m/n and 1 - m/n; the
    centered fluctuation is that share minus the mean channel weight.
    Regions with no atoms contribute exactly zero.

    Returns an (n_regions, 2) array of signed fluctuations; each row sums
    to zero exactly.
    """
    p = np.asarray(channel_probs, dtype=float)
    if p.shape != (2,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValidationError("channel_probs must be two non-negative numbers summing to 1")
    if n_atoms_mean <= 0:
        raise ValidationError("mean atom count must be positive")
    n = rng.poisson(n_atoms_mean, n_regions)
    m1 = rng.binomial(n, p[0])
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(n > 0, m1 / np.maximum(n, 1), 0.0)
    d1 = np.where(n > 0, share - p[0], 0.0)
    out = np.empty((n_regions, 2))
    out[:, 0] = d1
    out[:, 1] = -d1
    return out


def aggregate_frontier(fluctuations):
    """Total channel fluctuation of one frontier crossing.

    Sums the per-region fluctuations, projects the pair exactly onto the
    zero-sum line (subtract half the violation from each), and returns
    ``(dp1, dp2, second_moment)`` where second_moment is the per-draw
    estimate sum_beta dp_beta dp_beta^T of the fluctuation covariance.
    Its off-diagonal entry is non-positive in every draw and mirrors the
    diagonal exactly, as forced by the per-region zero sums.
    """
    f = np.asarray(fluctuations, dtype=float)
    if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] != 2:
        raise ValidationError("need an (n_regions, 2) fluctuation array with at least one region")
    dp = f.sum(axis=0)
    half = 0.5 * (dp[0] + dp[1])
    dp1 = dp[0] - half
    dp2 = dp[1] - half
    second = f.T @ f
    return float(dp1), float(dp2), second

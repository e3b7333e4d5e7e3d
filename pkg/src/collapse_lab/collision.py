"""Toy model of a single environmental collision on the apparatus.

The apparatus state is a finite ensemble of sectors (eigenvalue/eigenvector
pairs of its density matrix), each carrying a random phase.  A collision is
described by a toy scattering operator S = I - iT on a discrete grid of
sector and momentum labels.  Tracing the outgoing molecule out of the
post-collision state gives a traceless Hermitian change ``delta`` of the
sector matrix; its diagonal moves weight between sectors while the
off-diagonal part carries the random relative phases.

Two update routes are provided for the perturbed sector weights and basis:
first-order perturbation theory, and exact rediagonalization.  Comparing
them exposes the norm leakage between sectors (the sector wave functions do
not evolve unitarily), which is the physics point this module exists to
demonstrate.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ValidationError

__all__ = [
    "ModelError",
    "DegeneracyError",
    "SectorEnsemble",
    "ToyTMatrix",
    "WavePacketParams",
    "random_sector_ensemble",
    "random_toy_tmatrix",
    "collision_delta",
    "transition_probability",
    "cross_section",
    "sum_rule_deviation",
    "perturbative_sector_update",
    "rediagonalize_oracle",
]

TWO_PI = 2.0 * np.pi


class ModelError(ValueError):
    """The toy model left its domain of validity."""


class DegeneracyError(ModelError):
    """Perturbation theory rejected because two sector weights are too close."""


class SectorEnsemble:
    """Sector weights, random phases and energies of the apparatus state.

    weights  : p_k >= 0 summing to 1 (within 1e-10)
    phases   : alpha_k in [0, 2*pi), the ray ambiguity of each sector vector
    energies : E_k in arbitrary units (integer labels are fine for the toy)
    """

    def __init__(self, weights, phases, energies):
        p = np.asarray(weights, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValidationError("weights must be a non-empty 1-d array")
        if np.any(p < 0):
            raise ValidationError("sector weights must be non-negative")
        if abs(p.sum() - 1.0) > 1e-10:
            raise ValidationError(f"sector weights sum to {p.sum()}, not 1")
        a = np.mod(np.asarray(phases, dtype=float), TWO_PI)
        e = np.asarray(energies, dtype=float)
        if a.shape != p.shape or e.shape != p.shape:
            raise ValidationError("weights, phases and energies must have equal length")
        self.weights = p
        self.phases = a
        self.energies = e

    @property
    def K(self) -> int:
        return self.weights.size

    def with_phases(self, phases) -> "SectorEnsemble":
        return SectorEnsemble(self.weights, phases, self.energies)


def random_sector_ensemble(K, rng, min_gap=0.0):
    """Random ensemble with Dirichlet weights and uniform phases.

    With ``min_gap`` > 0, weights are redrawn until all pairwise gaps exceed
    it (needed by perturbation-theory tests).
    """
    for _ in range(1000):
        p = rng.dirichlet(np.ones(K))
        p = np.sort(p)[::-1]
        gaps = np.abs(p[:, None] - p[None, :])[np.triu_indices(K, 1)]
        if min_gap == 0.0 or np.min(gaps) > min_gap:
            break
    else:
        raise ModelError(f"could not draw {K} weights with pairwise gaps > {min_gap}")
    phases = rng.uniform(0.0, TWO_PI, K)
    return SectorEnsemble(p, phases, np.arange(K, dtype=float))


class ToyTMatrix:
    """Collision amplitudes t[k_out, q_out, k_in, q_in] on a finite grid.

    Sub-unitarity: for every incoming (k, q), the outgoing amplitudes obey
    sum |t|^2 <= 1, so that the elastic amplitude (1 - sum |t|^2)^(1/2) is
    real.  Violations raise ModelError.
    """

    def __init__(self, amplitudes, coupling=1.0):
        t = np.asarray(amplitudes, dtype=np.complex128) * coupling
        if t.ndim != 4 or t.shape[0] != t.shape[2] or t.shape[1] != t.shape[3]:
            raise ValidationError(f"amplitudes must have shape (K, Q, K, Q), got {t.shape}")
        col = np.sum(np.abs(t) ** 2, axis=(0, 1))  # indexed by (k_in, q_in)
        worst = float(col.max(initial=0.0))
        if worst > 1.0 + 1e-12:
            raise ModelError(f"sub-unitarity violated: sum |t|^2 = {worst:.6f} > 1 for some incoming state")
        t.flags.writeable = False
        self.amplitudes = t

    @property
    def K(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def Q(self) -> int:
        return self.amplitudes.shape[1]


def random_toy_tmatrix(K, Q, rng, coupling=1.0, saturate=False, conserve_energy=True):
    """Draw a random toy T-matrix with complex Gaussian amplitudes.

    Energy conservation is modeled as exact label matching on a discrete
    grid: sector k carries energy k, momentum q carries energy q, and an
    amplitude is non-zero only when k' + q' == k + q.

    The amplitudes are scaled so the strongest incoming column saturates
    sub-unitarity at ``coupling``.  With ``saturate=True`` every column is
    renormalized to sum |t|^2 = 1 exactly, which makes the outgoing
    probabilities obey the cross-section sum rule exactly.
    """
    t = rng.standard_normal((K, Q, K, Q)) + 1j * rng.standard_normal((K, Q, K, Q))
    if conserve_energy:
        k_out = np.arange(K)[:, None, None, None]
        q_out = np.arange(Q)[None, :, None, None]
        k_in = np.arange(K)[None, None, :, None]
        q_in = np.arange(Q)[None, None, None, :]
        t = np.where(k_out + q_out == k_in + q_in, t, 0.0)
    col = np.sqrt(np.sum(np.abs(t) ** 2, axis=(0, 1)))
    if saturate:
        if np.any(col == 0):
            raise ModelError("cannot saturate a column with no allowed transitions")
        t = t / col[None, None, :, :]
    else:
        t = t * (coupling / col.max())
    return ToyTMatrix(t)


def collision_delta(ens: SectorEnsemble, tmat: ToyTMatrix, eps, q_in=0):
    """Change of the sector matrix after one collision, with random phases.

    ``eps`` is the occurrence probability of the incoming molecule state
    ``q_in``.  The returned K x K complex matrix is traceless and Hermitian
    (gains and losses between sectors balance exactly), and scales linearly
    with eps.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValidationError(f"eps must lie in (0, 1], got {eps}")
    if ens.K != tmat.K:
        raise ValidationError(f"ensemble has {ens.K} sectors, T-matrix has {tmat.K}")
    if not 0 <= q_in < tmat.Q:
        raise ValidationError(f"q_in {q_in} out of range for Q={tmat.Q}")
    t_in = tmat.amplitudes[:, :, :, q_in]  # (k_out, q_out, k_in)
    p = ens.weights
    # loss: every sector leaks total outgoing probability out of its diagonal
    loss = -eps * p * np.sum(np.abs(t_in) ** 2, axis=(0, 1))
    # gain: incoherent injections carry the relative phase alpha_k - alpha_k'
    phase = np.exp(1j * ens.phases)
    decorated = t_in * (phase[None, None, :] / phase[:, None, None])
    gain = eps * np.einsum("aqk,bqk,k->ab", decorated, decorated.conj(), p)
    delta = gain + np.diag(loss)
    return delta


def transition_probability(tmat: ToyTMatrix, wp, k, k_prime, q_in=0) -> float:
    """Probability that one collision moves sector k to sector k_prime.

    Equal to the partial cross section divided by 2*pi*L^2; the wave-packet
    size cancels, so ``wp`` only participates through validation.
    """
    del wp  # P = sigma / (2 pi L^2) is L-independent by construction
    if not (0 <= k < tmat.K and 0 <= k_prime < tmat.K):
        raise ValidationError(f"sector index out of range for K={tmat.K}")
    if not 0 <= q_in < tmat.Q:
        raise ValidationError(f"q_in {q_in} out of range for Q={tmat.Q}")
    return float(np.sum(np.abs(tmat.amplitudes[k_prime, :, k, q_in]) ** 2))


def cross_section(tmat: ToyTMatrix, wp, k, k_prime, q_in=0) -> float:
    """Partial cross section sigma(k -> k'), normalized to 2*pi*L^2 in total
    for a sum-rule-saturating T-matrix."""
    return TWO_PI * wp.L**2 * transition_probability(tmat, wp, k, k_prime, q_in=q_in)


def sum_rule_deviation(tmat: ToyTMatrix, wp, k, q_in=0) -> float:
    """|sum_k' sigma(k -> k') - 2 pi L^2| / (2 pi L^2), zero for saturating T."""
    total = sum(transition_probability(tmat, wp, k, kp, q_in=q_in) for kp in range(tmat.K))
    return abs(total - 1.0)


class WavePacketParams:
    """Incoming wave-packet parameters.

    The packet size is tied to the environment density via L = n^(-1/3);
    construct either from the density or from an explicit consistent pair.
    """

    def __init__(self, number_density, q_mean=1.0, speed=1.0, L=None):
        n = float(number_density)
        if n <= 0:
            raise ValidationError("number density must be positive")
        expected = n ** (-1.0 / 3.0)
        if L is None:
            L = expected
        elif abs(L - expected) > 1e-12 * max(1.0, expected):
            raise ValidationError(f"L={L} inconsistent with n^(-1/3)={expected}")
        if L <= 0:
            raise ValidationError("wave-packet size must be positive")
        self.n = n
        self.L = float(L)
        self.q_mean = float(q_mean)
        self.v = float(speed)


def perturbative_sector_update(ens: SectorEnsemble, delta, gap_floor=1e-6):
    """First-order eigenvalue/eigenvector response to ``delta``.

    Returns ``(dp, mixing)`` where ``dp[k]`` is the diagonal of delta in the
    sector basis and ``mixing[k', k]`` is the coefficient of old sector k'
    admixed into sector k, carrying the 1/(p_k - p_k') denominator.

    Raises DegeneracyError when a weight gap falls below ``gap_floor``: in
    that regime first-order perturbation theory is meaningless and silently
    regularizing it would hide exactly the effect under study.
    """
    d = np.asarray(delta, dtype=np.complex128)
    K = ens.K
    if d.shape != (K, K):
        raise ValidationError(f"delta must be {K}x{K}, got {d.shape}")
    p = ens.weights
    gap = p[:, None] - p[None, :]
    off = ~np.eye(K, dtype=bool)
    tiny = np.abs(gap) <= gap_floor
    if np.any(tiny & off):
        i, j = np.argwhere(tiny & off)[0]
        raise DegeneracyError(
            f"sector weights p[{i}]={p[i]:.3e} and p[{j}]={p[j]:.3e} differ by "
            f"less than gap_floor={gap_floor:.1e}; perturbation theory invalid"
        )
    dp = np.real(np.diag(d)).copy()
    # mixing[k', k] = delta[k', k] / (p_k - p_k') for k' != k
    mixing = np.where(off, d / np.where(off, gap.T, 1.0), 0.0)
    return dp, mixing


def rediagonalize_oracle(ens: SectorEnsemble, delta, psd_tol=1e-10):
    """Exact eigen-decomposition of diag(p) + delta, matched to old sectors.

    Returns ``(weights, basis, defect)``: the exact new weights, the new
    sector vectors as columns of ``basis`` (matched to the old sectors by
    maximal overlap, phases fixed so the dominant component is real and
    positive), and the unitarity defect
    ``max_k | |<old k | new k>| - 1 |``, which is strictly positive for any
    generic delta with off-diagonal entries.
    """
    d = np.asarray(delta, dtype=np.complex128)
    K = ens.K
    if d.shape != (K, K):
        raise ValidationError(f"delta must be {K}x{K}, got {d.shape}")
    m = np.diag(ens.weights.astype(np.complex128)) + d
    if np.max(np.abs(m - m.conj().T)) > 1e-10:
        raise ModelError("delta is not Hermitian")
    vals, vecs = np.linalg.eigh(m)
    if vals[0] < -psd_tol:
        raise ModelError(f"perturbed matrix has eigenvalue {vals[0]:.3e}; delta too large for the toy regime")
    # match each new eigenvector to the old sector it overlaps most
    overlap = np.abs(vecs) ** 2  # overlap[k_old, i_new]
    rows, cols = linear_sum_assignment(-overlap)
    order = np.empty(K, dtype=int)
    order[rows] = cols
    weights = vals[order]
    basis = vecs[:, order]
    # fix ray phases deterministically
    for k in range(K):
        z = basis[k, k]
        if z != 0:
            basis[:, k] *= np.conj(z) / abs(z)
    defect = float(np.max(np.abs(np.abs(np.diag(basis)) - 1.0)))
    return weights, basis, defect

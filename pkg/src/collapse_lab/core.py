"""Finite-dimensional density-matrix algebra.

Density matrices here are plain complex numpy arrays wrapped in a thin
validating class.  Everything the rest of the library needs from linear
algebra lives in this module: tensor products, partial traces over an
arbitrary factorization, and a scalar coherence diagnostic for the
off-diagonal blocks of a channel-indexed state.

Composite indexing convention: the leftmost factor of a tensor product
varies slowest (row-major), i.e. ``tensor_product(a, b)`` places ``a``
on the coarse index.  All tolerances are centralized in `Tolerances` so
there is a single knob for numeric drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tolerances",
    "DEFAULT_TOLERANCES",
    "DimensionError",
    "ValidationError",
    "DensityMatrix",
    "SubsystemSplit",
    "tensor_product",
    "partial_trace",
    "coherence_norm",
    "damp_coherence",
]


class ValidationError(ValueError):
    """A matrix or parameter record failed its invariants."""


class DimensionError(ValidationError):
    """Inconsistent or oversized dimensions."""


@dataclass(frozen=True)
class Tolerances:
    """Central numeric tolerances shared by all modules.

    herm     : max allowed |M - M^dagger| entry for Hermiticity checks
    trace    : max allowed |Tr(rho) - 1|
    psd      : most negative eigenvalue accepted as "semidefinite"
    max_dim  : tensor products beyond this dimension raise DimensionError
    """

    herm: float = 1e-12
    trace: float = 1e-10
    psd: float = 1e-10
    max_dim: int = 4096


DEFAULT_TOLERANCES = Tolerances()


class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite complex matrix.

    Entries are stored as a read-only complex128 array; instances are
    immutable after construction and safe to share between workers.
    """

    def __init__(self, entries, tol: Tolerances = DEFAULT_TOLERANCES):
        m = np.array(entries, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"density matrix must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m.view(np.float64))):
            raise ValidationError("density matrix contains NaN or infinity")
        herm_defect = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
        if herm_defect > tol.herm:
            raise ValidationError(f"Hermiticity defect {herm_defect:.3e} exceeds {tol.herm:.1e}")
        tr = m.trace()
        if abs(tr - 1.0) > tol.trace:
            raise ValidationError(f"trace {tr} deviates from 1 by more than {tol.trace:.1e}")
        # PSD is asserted on the symmetrized matrix; robust against ~1e-13
        # asymmetry left by upstream arithmetic.
        sym = 0.5 * (m + m.conj().T)
        lo = np.linalg.eigvalsh(sym)[0]
        if lo < -tol.psd:
            raise ValidationError(f"smallest eigenvalue {lo:.3e} below -{tol.psd:.1e}")
        m.flags.writeable = False
        self._m = m
        self._tol = tol

    @property
    def entries(self) -> np.ndarray:
        return self._m

    @property
    def dim(self) -> int:
        return self._m.shape[0]

    @property
    def tol(self) -> Tolerances:
        return self._tol

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self._m + self._m.conj().T))

    @classmethod
    def maximally_mixed(cls, dim: int, tol: Tolerances = DEFAULT_TOLERANCES) -> "DensityMatrix":
        return cls(np.eye(dim) / dim, tol=tol)

    @classmethod
    def pure(cls, vector, tol: Tolerances = DEFAULT_TOLERANCES) -> "DensityMatrix":
        v = np.asarray(vector, dtype=np.complex128)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()), tol=tol)

    def __repr__(self):
        return f"DensityMatrix(dim={self.dim})"


@dataclass(frozen=True)
class SubsystemSplit:
    """Factorization of a composite Hilbert space.

    dims        : subsystem dimensions, leftmost slowest in the composite index
    keep_index  : which factor survives a partial trace (or labels the
                  channel index for `coherence_norm`)
    """

    dims: tuple
    keep_index: int

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims or any(d < 1 for d in dims):
            raise DimensionError(f"subsystem dims must be positive, got {dims}")
        if not 0 <= self.keep_index < len(dims):
            raise DimensionError(f"keep_index {self.keep_index} out of range for {len(dims)} factors")

    @property
    def total_dim(self) -> int:
        return math.prod(self.dims)

    def check(self, dim: int):
        if self.total_dim != dim:
            raise DimensionError(f"split dims {self.dims} have product {self.total_dim}, matrix has dim {dim}")


def tensor_product(a: DensityMatrix, b: DensityMatrix) -> DensityMatrix:
    """Tensor product with `a` on the slow (leftmost) index.

    partial_trace over either factor of the result recovers the other.
    """
    tol = a.tol
    out_dim = a.dim * b.dim
    if out_dim > tol.max_dim:
        raise DimensionError(f"product dimension {out_dim} exceeds max_dim {tol.max_dim}")
    return DensityMatrix(np.kron(a.entries, b.entries), tol=tol)


def partial_trace(rho: DensityMatrix, split: SubsystemSplit) -> DensityMatrix:
    """Trace out every factor except ``split.keep_index``.

    Linear in rho and trace preserving.
    """
    split.check(rho.dim)
    dims = split.dims
    n = len(dims)
    t = rho.entries.reshape(dims + dims)
    # einsum: traced factors share a row/column label, the kept factor keeps
    # distinct labels.
    letters = "abcdefghijklmnopqrstuvwx"
    row = list(letters[:n])
    col = list(letters[:n])
    col[split.keep_index] = letters[n]
    sub = "".join(row) + "".join(col) + "->" + row[split.keep_index] + col[split.keep_index]
    reduced = np.einsum(sub, t)
    return DensityMatrix(reduced, tol=rho.tol)


def _channel_labels(split: SubsystemSplit):
    """Channel label of each composite basis index, for the keep_index factor."""
    dims = split.dims
    post = math.prod(dims[split.keep_index + 1:]) if split.keep_index + 1 < len(dims) else 1
    idx = np.arange(split.total_dim)
    return (idx // post) % dims[split.keep_index]


def coherence_norm(rho: DensityMatrix, block_split: SubsystemSplit) -> float:
    """Frobenius norm of the upper off-diagonal blocks in the channel index.

    Blocks are indexed by the factor ``block_split.keep_index``; only pairs
    (j, j') with j < j' are counted once (the lower blocks mirror them by
    Hermiticity).  Zero iff rho is block-diagonal in the channel index, and
    invariant under channel-diagonal unitaries.
    """
    block_split.check(rho.dim)
    ch = _channel_labels(block_split)
    mask = ch[:, None] < ch[None, :]
    return float(np.sqrt(np.sum(np.abs(rho.entries[mask]) ** 2)))


def damp_coherence(rho: DensityMatrix, block_split: SubsystemSplit, factor: float) -> DensityMatrix:
    """Multiply every off-diagonal channel block by ``factor`` in [0, 1].

    This is the uniform exponential damping of inter-channel coherence; the
    result is a convex mix of rho with its block-diagonal pinching, hence
    still a valid state.
    """
    if not 0.0 <= factor <= 1.0:
        raise ValidationError(f"damping factor must lie in [0, 1], got {factor}")
    block_split.check(rho.dim)
    ch = _channel_labels(block_split)
    offblock = ch[:, None] != ch[None, :]
    m = rho.entries.copy()
    m[offblock] *= factor
    return DensityMatrix(m, tol=rho.tol)

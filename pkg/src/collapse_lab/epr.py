"""Joint reduction of an entangled spin pair by two local apparatuses.

The pair starts in a |+->/|-+> superposition along z; both apparatuses
measure along a common axis z' at angle theta.  Rotating the state into
the measurement basis gives four amplitudes

    c_pp = -(a+b) c s      c_pm = a c^2 - b s^2
    c_mp = b c^2 - a s^2   c_mm = (a+b) c s

with c = cos(theta/2), s = sin(theta/2); their squared magnitudes are the
quantum weights of the four joint outcomes and seed a 2x2 grid of
fluctuating channel probabilities.

Locality shapes the noise: apparatus 1 only moves weight between its own
outcomes (rows of the grid), independently in each column, and apparatus 2
only moves weight between columns, independently in each row, the two
apparatuses drawing from disjoint random streams.  In the interior this
makes every covariance between cell pairs differing in both indices
exactly zero (the block structure of two commuting local diffusions)
while each marginal performs an ordinary two-channel Wright-Fisher
reduction with increment variance rate * m_+ m_- dt.

At the boundary a frozen cell's share of a kick is rerouted to the live
cell of its own row (apparatus-1 kicks) or column (apparatus-2 kicks).
The rerouting is zero-mean, so the grid stays a martingale and the joint
hitting law still reproduces the quantum weights; for a singlet it turns
the two anticorrelated live cells into an effective two-channel reduction.

The two marginals are carried as state alongside the cells: a kick updates
them by its own exact row/column sums, so an apparatus whose rate is zero
leaves the other side's marginal untouched to the last bit.  They are
resynchronized from the cells whenever a trajectory hits the boundary
(clip or vertex snap).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ValidationError
from .decoherence import StepSizeError
from .reduction import _apply_step, _repair_rows, DEFAULT_ABSORB_TOL

__all__ = [
    "SpinPairState",
    "JointChannelGrid",
    "BlockCovariance",
    "rotate_coefficients",
    "joint_weights",
    "local_kick_step",
    "predicted_kick_covariance",
    "JointReductionResult",
    "run_joint_reduction",
    "run_sequential_reduction",
    "BlockCheckReport",
    "covariance_block_check",
]

STEP_CAP = 0.01
_BLOCK = 128
_ZERO_SNAP = 1e-15


@dataclass(frozen=True)
class SpinPairState:
    """Entangled pair amplitudes and common analyzer angle.

    a     : amplitude of |1 up, 2 down> along z
    b     : amplitude of |1 down, 2 up> along z
    theta : angle between z and the measurement axis z'
    """

    a: complex
    b: complex
    theta: float

    def __post_init__(self):
        if abs(abs(self.a) ** 2 + abs(self.b) ** 2 - 1.0) > 1e-12:
            raise ValidationError("|a|^2 + |b|^2 must equal 1")


def rotate_coefficients(state: SpinPairState) -> np.ndarray:
    """Outcome amplitudes c[alpha, beta] in the common z' basis.

    Index 0 is outcome +, index 1 is outcome -.  The rotation preserves
    the norm, so the four squared magnitudes sum to 1.
    """
    c = np.cos(state.theta / 2.0)
    s = np.sin(state.theta / 2.0)
    a, b = state.a, state.b
    return np.array(
        [
            [-(a + b) * c * s, a * c * c - b * s * s],
            [b * c * c - a * s * s, (a + b) * c * s],
        ],
        dtype=np.complex128,
    )


class JointChannelGrid:
    """2x2 joint outcome probabilities with exact unit total.

    Cells holding exactly 0.0 are frozen and can never revive.  The two
    apparatus marginals are carried with the grid; passing them explicitly
    preserves their bit patterns across steps that provably do not move
    them.
    """

    def __init__(self, weights, marginal_1=None, marginal_2=None):
        q = np.array(weights, dtype=float)
        if q.shape != (2, 2):
            raise ValidationError(f"joint grid must be 2x2, got {q.shape}")
        if np.any(q < 0.0) or not np.all(np.isfinite(q)):
            raise ValidationError("joint weights must be finite and non-negative")
        if abs(q.sum() - 1.0) > 1e-9:
            raise ValidationError(f"joint weights sum to {q.sum()}, not 1")
        _repair_rows(q.reshape(1, 4))
        m1 = q.sum(axis=1) if marginal_1 is None else np.array(marginal_1, dtype=float)
        m2 = q.sum(axis=0) if marginal_2 is None else np.array(marginal_2, dtype=float)
        if np.max(np.abs(m1 - q.sum(axis=1))) > 1e-9 or np.max(np.abs(m2 - q.sum(axis=0))) > 1e-9:
            raise ValidationError("carried marginals inconsistent with the cells")
        for arr in (q, m1, m2):
            arr.flags.writeable = False
        self.weights = q
        self._m1 = m1
        self._m2 = m2

    @property
    def frozen(self) -> np.ndarray:
        return self.weights == 0.0

    @property
    def marginal_1(self) -> np.ndarray:
        """Apparatus-1 outcome weights m_alpha."""
        return self._m1

    @property
    def marginal_2(self) -> np.ndarray:
        """Apparatus-2 outcome weights mu_beta."""
        return self._m2

    @property
    def winner(self):
        """(alpha, beta) of the absorbed cell, or None."""
        flat = int(np.argmax(self.weights))
        if self.weights.flat[flat] == 1.0:
            return divmod(flat, 2)
        return None

    def __repr__(self):
        return f"JointChannelGrid({self.weights.tolist()})"


def joint_weights(coefficients) -> JointChannelGrid:
    """Quantum weights |c[alpha, beta]|^2 with exact zeros pre-frozen."""
    c = np.asarray(coefficients, dtype=np.complex128)
    if c.shape != (2, 2):
        raise ValidationError("need a 2x2 coefficient grid")
    q = np.abs(c) ** 2
    if abs(q.sum() - 1.0) > 1e-12:
        raise ValidationError("coefficients are not normalized")
    q[q < _ZERO_SNAP] = 0.0
    return JointChannelGrid(q)


@dataclass(frozen=True)
class BlockCovariance:
    """Local fluctuation rates of the two apparatus backgrounds."""

    rate_1: float
    rate_2: float

    def __post_init__(self):
        if self.rate_1 < 0 or self.rate_2 < 0:
            raise ValidationError("rates must be non-negative")

    @property
    def max_rate(self) -> float:
        return max(self.rate_1, self.rate_2)


def _kick_deltas(Q, M1, M2, cov, dt, z1, z2):
    """Assemble kick increments for a batch of grids.

    Q        : (n, 2, 2) cells;  M1, M2 : (n, 2) carried marginals
    z1, z2   : (n, 2) standard normals for the column / row transfers

    Apparatus-1 transfers x_beta move weight from row - to row + inside
    column beta, independently per column, scaled so the row marginal
    receives total variance rate_1 * m_+ m_- dt (column beta carries the
    share mu_beta); symmetrically for apparatus 2.  A frozen cell's share
    is rerouted along its own row/column.
    """
    n = Q.shape[0]
    live = Q > 0.0
    var1 = np.maximum(cov.rate_1 * M1[:, 0] * M1[:, 1] * dt, 0.0)
    var2 = np.maximum(cov.rate_2 * M2[:, 0] * M2[:, 1] * dt, 0.0)
    x = z1 * np.sqrt(var1[:, None] * np.maximum(M2, 0.0))  # one transfer per column
    y = z2 * np.sqrt(var2[:, None] * np.maximum(M1, 0.0))  # one transfer per row
    delta = np.zeros_like(Q)
    rows = np.arange(n)
    sign = (1.0, -1.0)
    for beta in (0, 1):
        for alpha in (0, 1):
            dest = np.where(live[:, alpha, beta], beta, 1 - beta)
            np.add.at(delta, (rows, alpha, dest), sign[alpha] * x[:, beta])
    for alpha in (0, 1):
        for beta in (0, 1):
            dest = np.where(live[:, alpha, beta], alpha, 1 - alpha)
            np.add.at(delta, (rows, dest, beta), sign[beta] * y[:, alpha])
    return delta


def _joint_step(Q, M1, M2, cov, dt, z1, z2, absorb_tol):
    """Advance cells and carried marginals by one kick; returns raw deltas.

    Marginals move by the exact row/column sums of the kick, so a silent
    apparatus leaves the opposite marginal bit-for-bit unchanged; rows with
    boundary activity are resynchronized from their cells.
    """
    n = Q.shape[0]
    delta = _kick_deltas(Q, M1, M2, cov, dt, z1, z2)
    M1 += delta.sum(axis=2)
    M2 += delta.sum(axis=1)
    flat = Q.reshape(n, 4)
    touched = _apply_step(flat, delta.reshape(n, 4).copy(), absorb_tol)
    if touched.any():
        M1[touched] = Q[touched].sum(axis=2)
        M2[touched] = Q[touched].sum(axis=1)
    return delta


def local_kick_step(grid, cov, dt, rng, rng_2=None, absorb_tol=DEFAULT_ABSORB_TOL):
    """One joint kick step of a single grid.

    With ``rng_2`` given, apparatus 2 draws from its own stream (the
    structural form of the two-apparatus independence); otherwise both
    kicks come sequentially from ``rng``.
    """
    if cov.max_rate * dt > STEP_CAP:
        raise StepSizeError(f"max(rate)*dt = {cov.max_rate * dt:.3g} exceeds the step cap {STEP_CAP}")
    if grid.winner is not None:
        return grid
    Q = grid.weights.reshape(1, 2, 2).copy()
    M1 = grid.marginal_1.reshape(1, 2).copy()
    M2 = grid.marginal_2.reshape(1, 2).copy()
    z1 = rng.standard_normal((1, 2))
    z2 = (rng_2 or rng).standard_normal((1, 2))
    _joint_step(Q, M1, M2, cov, dt, z1, z2, absorb_tol)
    return JointChannelGrid(Q[0], marginal_1=M1[0], marginal_2=M2[0])


def predicted_kick_covariance(marginal_1, marginal_2, cov, dt) -> np.ndarray:
    """Exact 4x4 covariance of the interior kick model at these marginals.

    Flattened index is 2*alpha + beta.  Entries coupling cells that differ
    in both indices are exactly zero.
    """
    m = np.asarray(marginal_1, dtype=float)
    mu = np.asarray(marginal_2, dtype=float)
    var1 = cov.rate_1 * m[0] * m[1] * dt
    var2 = cov.rate_2 * mu[0] * mu[1] * dt
    sign = (1.0, -1.0)
    C = np.zeros((4, 4))
    for a1 in (0, 1):
        for b1 in (0, 1):
            for a2 in (0, 1):
                for b2 in (0, 1):
                    i, j = 2 * a1 + b1, 2 * a2 + b2
                    if b1 == b2:
                        C[i, j] += sign[a1] * sign[a2] * var1 * mu[b1]
                    if a1 == a2:
                        C[i, j] += sign[b1] * sign[b2] * var2 * m[a1]
    return C


# ---------------------------------------------------------------------------
# trajectory ensembles


@dataclass
class JointReductionResult:
    weights: np.ndarray
    outcomes: np.ndarray  # (n,) flat outcome index 2*alpha+beta, -1 if unabsorbed
    times: np.ndarray
    n_unabsorbed: int
    frequencies: np.ndarray  # (2, 2)
    freq_stderr: np.ndarray
    marginal_1_freq: np.ndarray
    marginal_2_freq: np.ndarray
    increments: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))
    predicted_covariance: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))


def _run_joint_batch(weights, cov, dt, seed, lo, hi, absorb_tol, max_steps,
                     collect_interior=False, min_cell=0.05, sequential=False):
    children = np.random.SeedSequence(seed).spawn(hi)[lo:hi]
    pairs = [c.spawn(2) for c in children]
    rng1 = [np.random.default_rng(p[0]) for p in pairs]
    rng2 = [np.random.default_rng(p[1]) for p in pairs]
    n = hi - lo
    Q = np.tile(np.asarray(weights, dtype=float).reshape(1, 2, 2), (n, 1, 1))
    _repair_rows(Q.reshape(n, 4))
    M1 = Q.sum(axis=2)
    M2 = Q.sum(axis=1)
    outcomes = np.full(n, -1, dtype=np.int64)
    times = np.zeros(n)
    buf1 = np.empty((n, _BLOCK, 2))
    buf2 = np.empty((n, _BLOCK, 2))
    cur = np.full(n, _BLOCK, dtype=np.int64)
    start_done = Q.reshape(n, 4).max(axis=1) == 1.0
    outcomes[start_done] = np.argmax(Q.reshape(n, 4)[start_done], axis=1)
    alive = ~start_done
    # sequential mode: apparatus 2 stays quiet until apparatus 1 has
    # resolved its marginal (one row owns all the weight)
    phase2 = Q.sum(axis=2).max(axis=1) == 1.0
    inc_rows = []
    pred_acc = np.zeros((4, 4))
    pred_n = 0
    step = 0
    while alive.any() and step < max_steps:
        idx = np.nonzero(alive)[0]
        refill = idx[cur[idx] >= _BLOCK]
        for i in refill:
            buf1[i] = rng1[i].standard_normal((_BLOCK, 2))
            buf2[i] = rng2[i].standard_normal((_BLOCK, 2))
            cur[i] = 0
        z1 = buf1[idx, cur[idx], :]
        z2 = buf2[idx, cur[idx], :]
        cur[idx] += 1
        Qs, M1s, M2s = Q[idx], M1[idx], M2[idx]
        if collect_interior:
            interior = (Qs > min_cell).all(axis=(1, 2))
        if sequential:
            # phase-1 rows: apparatus 2 quiet; phase-2 rows: apparatus 1 quiet
            quiet2 = ~phase2[idx]
            z2 = np.where(quiet2[:, None], 0.0, z2)
            z1 = np.where(quiet2[:, None], z1, 0.0)
        delta = _joint_step(Qs, M1s, M2s, cov, dt, z1, z2, absorb_tol)
        if collect_interior and interior.any():
            inc_rows.append(delta[interior].reshape(-1, 4))
            for m1row, m2row in zip(M1s[interior], M2s[interior]):
                pred_acc += predicted_kick_covariance(m1row, m2row, cov, dt)
            pred_n += int(interior.sum())
        Q[idx], M1[idx], M2[idx] = Qs, M1s, M2s
        step += 1
        times[idx] += dt
        if sequential:
            marg = Qs.sum(axis=2)
            sub_phase = phase2[idx]
            phase2[idx] = sub_phase | (marg.max(axis=1) == 1.0)
        flat = Qs.reshape(-1, 4)
        done = flat.max(axis=1) == 1.0
        if done.any():
            hit = idx[done]
            outcomes[hit] = np.argmax(Q[hit].reshape(-1, 4), axis=1)
            alive[hit] = False
    increments = np.concatenate(inc_rows) if inc_rows else np.empty((0, 4))
    pred = pred_acc / pred_n if pred_n else np.zeros((4, 4))
    return outcomes, times, increments, pred


def _summarize_joint(weights, outcomes, times, increments, pred):
    ok = outcomes >= 0
    n_ok = max(int(ok.sum()), 1)
    counts = np.bincount(outcomes[ok], minlength=4).astype(float)
    freq = (counts / n_ok).reshape(2, 2)
    stderr = np.sqrt(np.maximum(freq * (1.0 - freq), 1e-300) / n_ok)
    return JointReductionResult(
        weights=np.asarray(weights, dtype=float).reshape(2, 2),
        outcomes=outcomes,
        times=times,
        n_unabsorbed=int(np.sum(~ok)),
        frequencies=freq,
        freq_stderr=stderr,
        marginal_1_freq=freq.sum(axis=1),
        marginal_2_freq=freq.sum(axis=0),
        increments=increments,
        predicted_covariance=pred,
    )


def run_joint_reduction(state, cov, dt, n_trajectories, seed,
                        absorb_tol=DEFAULT_ABSORB_TOL, max_steps=None,
                        collect_interior=False, min_cell=0.05,
                        sequential=False) -> JointReductionResult:
    """Reduce n_trajectories copies of the pair state to joint outcomes.

    Each trajectory owns two spawned substreams (one per apparatus)
    derived from its index, making results reproducible and the apparatus
    draws structurally independent.  ``sequential=True`` lets apparatus 1
    resolve its marginal before apparatus 2 starts kicking, which must
    reproduce the simultaneous statistics.
    """
    if n_trajectories < 1000:
        raise ValidationError("ensemble needs at least 10^3 trajectories")
    if cov.max_rate * dt > STEP_CAP:
        raise StepSizeError(f"max(rate)*dt = {cov.max_rate * dt:.3g} exceeds the step cap {STEP_CAP}")
    grid = joint_weights(rotate_coefficients(state)) if isinstance(state, SpinPairState) else state
    if max_steps is None:
        rate = cov.max_rate if cov.max_rate > 0 else 1.0
        max_steps = int(np.ceil(120.0 / (rate * dt)))
    outcomes, times, inc, pred = _run_joint_batch(
        grid.weights, cov, dt, seed, 0, n_trajectories, absorb_tol, max_steps,
        collect_interior=collect_interior, min_cell=min_cell, sequential=sequential,
    )
    return _summarize_joint(grid.weights, outcomes, times, inc, pred)


def run_sequential_reduction(state, cov, dt, n_trajectories, seed, **kw) -> JointReductionResult:
    """Apparatus 1 measures first; apparatus 2 starts after it has absorbed."""
    return run_joint_reduction(state, cov, dt, n_trajectories, seed, sequential=True, **kw)


# ---------------------------------------------------------------------------
# covariance diagnostics


@dataclass
class BlockCheckReport:
    n_samples: int
    conclusive: bool
    empirical: np.ndarray
    predicted: np.ndarray
    zero_pairs: list
    block_pairs: list
    passed: bool

    def __str__(self):
        status = "PASS" if self.passed else ("FAIL" if self.conclusive else "INCONCLUSIVE")
        return f"BlockCheckReport({status}, n={self.n_samples})"


_ZERO_REQUIRED = [(0, 3), (1, 2)]  # cell pairs differing in both indices


def covariance_block_check(increments, predicted, min_samples=10_000,
                           z_limit=3.0, rel_tol=0.10) -> BlockCheckReport:
    """Test recorded interior increments against the block covariance.

    Entries required zero by locality (cell pairs differing in both
    apparatus outcomes) must sit within ``z_limit`` standard errors of 0;
    the remaining entries must match the model prediction within
    ``rel_tol`` relative error.  Too few interior samples yields an
    inconclusive (not failed) report.
    """
    d = np.asarray(increments, dtype=float)
    pred = np.asarray(predicted, dtype=float)
    n = d.shape[0]
    if n < min_samples:
        return BlockCheckReport(n, False, np.zeros((4, 4)), pred, [], [], False)
    emp = d.T @ d / n
    zero_pairs = []
    for i, j in _ZERO_REQUIRED:
        prod = d[:, i] * d[:, j]
        se = prod.std(ddof=1) / np.sqrt(n)
        z = emp[i, j] / se if se > 0 else 0.0
        zero_pairs.append({"pair": (i, j), "value": emp[i, j], "z": float(z),
                           "passed": bool(abs(z) <= z_limit)})
    block_pairs = []
    for i in range(4):
        for j in range(i, 4):
            if (i, j) in _ZERO_REQUIRED or (j, i) in _ZERO_REQUIRED:
                continue
            scale = max(abs(pred[i, j]), 1e-300)
            rel = abs(emp[i, j] - pred[i, j]) / scale
            block_pairs.append({"pair": (i, j), "empirical": emp[i, j],
                                "predicted": pred[i, j], "rel_err": float(rel),
                                "passed": bool(rel <= rel_tol)})
    passed = all(p["passed"] for p in zero_pairs) and all(p["passed"] for p in block_pairs)
    return BlockCheckReport(n, True, emp, pred, zero_pairs, block_pairs, passed)

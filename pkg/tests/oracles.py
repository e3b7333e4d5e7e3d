"""Independent oracle implementations used to freeze expected test values.

Everything here deliberately avoids the library's own code paths: plain
loops, enumeration over discrete sampling distributions, and textbook
matrix constructions.
"""

import math

import numpy as np
from scipy.stats import poisson


def collision_delta_loops(weights, phases, amplitudes, eps, q_in=0):
    """Quadruple-loop evaluation of the one-collision sector change.

    Same definition as the library's einsum route, summed in a different
    association order.
    """
    K = len(weights)
    Q = amplitudes.shape[1]
    delta = np.zeros((K, K), dtype=complex)
    for k in range(K):
        loss = 0.0
        for kp in range(K):
            for qp in range(Q):
                loss += abs(amplitudes[kp, qp, k, q_in]) ** 2
        delta[k, k] -= eps * weights[k] * loss
    for kp in range(K):
        for kpp in range(K):
            acc = 0.0
            for k in range(K):
                rel = np.exp(1j * (phases[k] - phases[kp])) * np.exp(-1j * (phases[k] - phases[kpp]))
                for qp in range(Q):
                    acc += (amplitudes[kp, qp, k, q_in]
                            * np.conj(amplitudes[kpp, qp, k, q_in])
                            * rel * weights[k])
            delta[kp, kpp] += eps * acc
    return delta


def beta_fluctuation_variance(p1, mean_atoms, n_max=40):
    """Variance of one region's channel-1 fluctuation by direct enumeration.

    A region draws n ~ Poisson(mean_atoms) atoms, m ~ Binomial(n, p1) of
    them channel-1, and contributes m/n - p1 (zero when n = 0).  The
    second moment is sum_n P(n) * p1 (1-p1) / n over n >= 1, which the
    enumeration reproduces without using that closed form.
    """
    var = 0.0
    for n in range(1, n_max + 1):
        pn = poisson.pmf(n, mean_atoms)
        second = 0.0
        for m in range(0, n + 1):
            prob_m = math.comb(n, m) * p1**m * (1.0 - p1) ** (n - m)
            second += prob_m * (m / n - p1) ** 2
        var += pn * second
    return var


def rotated_amplitudes_matrix(a, b, theta):
    """EPR outcome amplitudes via an explicit two-qubit basis change.

    Builds the state vector in the z basis and applies the single-particle
    rotation U (rows are the z' bras) to each factor.
    """
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    U = np.array([[c, -s], [s, c]])  # <z',alpha| z,beta>
    psi_z = a * np.kron([1, 0], [0, 1]) + b * np.kron([0, 1], [1, 0])
    psi_rot = np.kron(U, U) @ psi_z
    return psi_rot.reshape(2, 2)

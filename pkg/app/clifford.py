"""
Clifford multiplication on 2-component spinors and the flat Dirac operator.

Convention: gamma_j = i * sigma_j (Pauli matrices), so gamma_j^2 = -Id and every
gamma_j is skew-adjoint. With this choice the spinor bubble satisfies
D Phi = U^2 Phi without any change of orientation.
"""
import logging
import numpy as np
from errors import GridTooSmall

logger = logging.getLogger(__name__)

PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)

GAMMA = 1j * PAULI
GAMMA.setflags(write=False)


def spinor(c1, c2=0.0):
    return np.array([c1, c2], dtype=complex)


def norm2(psi):
    psi = np.asarray(psi)
    return np.sum((psi * np.conj(psi)).real, axis=-1)


def inner(psi, phi):
    """Hermitian product, linear in the first argument."""
    return np.sum(np.asarray(psi) * np.conj(np.asarray(phi)), axis=-1)


def random_unit_spinor(rng):
    z = rng.normal(size=2) + 1j * rng.normal(size=2)
    return z / np.sqrt(norm2(z))


def clifford_mul(v, psi):
    """(sum_j v_j gamma_j) psi, broadcasting over leading axes."""
    v = np.asarray(v, dtype=float)
    psi = np.asarray(psi, dtype=complex)
    return np.einsum("...j,jab,...b->...a", v, GAMMA, psi)


def _check_grid(field, spacing):
    if spacing <= 0:
        raise GridTooSmall(f"grid spacing must be positive, got {spacing}")
    if min(field.shape[:3]) < 3:
        raise GridTooSmall(f"need at least 3 nodes per axis, got {field.shape[:3]}")


def central_differences(field, spacing):
    """Central differences along the three grid axes, restricted to interior nodes."""
    _check_grid(field, spacing)
    f = field
    d1 = (f[2:, 1:-1, 1:-1] - f[:-2, 1:-1, 1:-1]) / (2.0 * spacing)
    d2 = (f[1:-1, 2:, 1:-1] - f[1:-1, :-2, 1:-1]) / (2.0 * spacing)
    d3 = (f[1:-1, 1:-1, 2:] - f[1:-1, 1:-1, :-2]) / (2.0 * spacing)
    return d1, d2, d3


def dirac_apply(field, spacing):
    """
    Flat Dirac operator sum_j gamma_j d_j on a spinor field sampled on a uniform grid.

    field has shape (n1, n2, n3, 2); the result covers interior nodes only.
    """
    field = np.asarray(field, dtype=complex)
    d1, d2, d3 = central_differences(field, spacing)
    out = d1 @ GAMMA[0].T
    out += d2 @ GAMMA[1].T
    out += d3 @ GAMMA[2].T
    return out


def laplacian_apply(field, spacing):
    """7-point Laplacian on interior nodes; trailing component axes are carried along."""
    field = np.asarray(field)
    _check_grid(field, spacing)
    f = field
    centre = f[1:-1, 1:-1, 1:-1]
    total = (f[2:, 1:-1, 1:-1] + f[:-2, 1:-1, 1:-1]
             + f[1:-1, 2:, 1:-1] + f[1:-1, :-2, 1:-1]
             + f[1:-1, 1:-1, 2:] + f[1:-1, 1:-1, :-2])
    return (total - 6.0 * centre) / (spacing * spacing)

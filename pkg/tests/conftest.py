import numpy as np
import pytest

from iontomo.quantum_core import haar_random_unitary, ket_to_dm, haar_random_pure_state


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_density(rng, dim=4, rank=None):
    rank = rank or dim
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def brute_force_apply(chi, rho, basis):
    out = np.zeros_like(rho)
    for m in range(len(basis)):
        for n in range(len(basis)):
            out += chi[m, n] * basis[m] @ rho @ basis[n].conj().T
    return out


__all__ = ["random_density", "brute_force_apply", "haar_random_unitary", "ket_to_dm", "haar_random_pure_state"]

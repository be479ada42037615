"""Two-qubit linear algebra: Pauli-product basis, process matrices, channels.

Conventions used throughout the package:

* single-ion basis order is ``(D, S)``; ``Z|D> = +|D>``;
* two-ion kets are ordered ``|ion2, ion1>`` (control on the left), so the
  product basis reads ``DD, DS, SD, SS``;
* Pauli products are unnormalized (``A_m^2 = I``) which makes a
  trace-preserving process matrix have unit trace;
* vectorization is column stacking and the Choi matrix is ordered
  ``input (x) output``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

PAULI_1Q = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

KET_D = np.array([1, 0], dtype=complex)
KET_S = np.array([0, 1], dtype=complex)
PRODUCT_LABELS = ("DD", "DS", "SD", "SS")

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-8
PSD_TOL = -1e-9


class ValidationError(ValueError):
    """Raised when an object violates a physical invariant."""


def pauli_labels(n_qubits: int = 2) -> list[str]:
    return ["".join(p) for p in itertools.product("IXYZ", repeat=n_qubits)]


@lru_cache(maxsize=None)
def _pauli_basis_cached(n_qubits: int) -> np.ndarray:
    ops = []
    for labels in itertools.product("IXYZ", repeat=n_qubits):
        m = np.eye(1, dtype=complex)
        for lab in labels:
            m = np.kron(m, PAULI_1Q[lab])
        ops.append(m)
    arr = np.array(ops)
    arr.setflags(write=False)
    return arr


def pauli_product_basis(n_qubits: int = 2) -> np.ndarray:
    """Return the ``4**n`` Pauli products as an array of shape ``(4**n, 2**n, 2**n)``.

    Ordering is lexicographic in ``I, X, Y, Z`` with the leftmost label
    acting on ion 2 (the control), e.g. index 1 is ``IX`` = ``I (x) X``.
    """
    if n_qubits not in (1, 2):
        raise ValueError(f"unsupported qubit count {n_qubits!r}; expected 1 or 2")
    return _pauli_basis_cached(n_qubits)


@lru_cache(maxsize=None)
def _vec_basis() -> np.ndarray:
    # columns are vec(A_m); P^dag P = 4 I
    basis = pauli_product_basis(2)
    return np.stack([vec(a) for a in basis], axis=1)


def vec(m: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(m).T.reshape(-1)


def unvec(v: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(v.size)))
    return np.asarray(v).reshape(d, d).T


def hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


# ---------------------------------------------------------------------------
# Density matrices
# ---------------------------------------------------------------------------


def ket_to_dm(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def validate_density(rho: np.ndarray, atol: float = HERMITIAN_TOL) -> np.ndarray:
    """Check Hermiticity, unit trace and positivity; return ``rho`` as a complex array."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValidationError(f"density matrix must be square, got shape {rho.shape}")
    if np.abs(rho - rho.conj().T).max() > atol:
        raise ValidationError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > atol:
        raise ValidationError(f"density matrix trace {np.trace(rho).real:.3g} != 1")
    if np.linalg.eigvalsh(hermitize(rho)).min() < PSD_TOL:
        raise ValidationError("density matrix has negative eigenvalues")
    return rho


def fidelity_pure(psi_ideal: np.ndarray, rho: np.ndarray) -> float:
    """Overlap ``<psi|rho|psi>`` of a density matrix with a pure target."""
    psi = np.asarray(psi_ideal, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (psi.size, psi.size):
        raise ValueError(f"dimension mismatch: psi {psi.size}, rho {rho.shape}")
    return float(np.real(psi.conj() @ rho @ psi))


def partial_trace_mode(state: np.ndarray, n_levels: int) -> np.ndarray:
    """Trace out the vibrational mode and return the 4x4 two-qubit density.

    ``state`` is either a ket of length ``4 * n_levels`` or the corresponding
    density matrix, ordered ``|ion2, ion1, n>``.
    """
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        psi = state.reshape(4, n_levels)
        return psi @ psi.conj().T
    rho = state.reshape(4, n_levels, 4, n_levels)
    return np.einsum("anbn->ab", rho)


def haar_random_pure_state(dim: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-distributed pure state(s) from normalized complex Gaussian vectors.

    With ``size`` given, returns an array of shape ``(size, dim)``.
    """
    if dim < 2:
        raise ValueError("dim must be at least 2")
    shape = (dim,) if size is None else (size, dim)
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def haar_random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


# ---------------------------------------------------------------------------
# Process matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProcessMatrix:
    """16x16 process matrix in the Pauli-product basis.

    ``E(rho) = sum_mn chi[m, n] A_m rho A_n^dag``.
    """

    chi: np.ndarray

    def __post_init__(self):
        chi = np.array(self.chi, dtype=complex)
        if chi.shape != (16, 16):
            raise ValidationError(f"chi must be 16x16, got {chi.shape}")
        chi.setflags(write=False)
        object.__setattr__(self, "chi", chi)

    def __eq__(self, other):
        if not isinstance(other, ProcessMatrix):
            return NotImplemented
        return bool(np.array_equal(self.chi, other.chi))

    __hash__ = None

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.chi)))

    def choi(self) -> np.ndarray:
        return chi_to_choi(self.chi)

    def superop(self) -> np.ndarray:
        return chi_to_superop(self.chi)

    def tp_residual(self) -> float:
        """Max deviation of ``sum chi_mn A_n^dag A_m`` from the identity."""
        return tp_residual(self.chi)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(hermitize(self.chi)).min())

    def validate(self, tp_tol: float = 1e-6) -> "ProcessMatrix":
        chi = self.chi
        if np.abs(chi - chi.conj().T).max() > HERMITIAN_TOL:
            raise ValidationError("chi is not Hermitian")
        if abs(np.trace(chi) - 1) > TRACE_TOL:
            raise ValidationError(f"tr(chi) = {np.trace(chi).real:.10g} != 1")
        if self.min_eigenvalue() < PSD_TOL:
            raise ValidationError(f"chi has eigenvalue {self.min_eigenvalue():.3g}")
        if self.tp_residual() > tp_tol:
            raise ValidationError(f"chi violates trace preservation by {self.tp_residual():.3g}")
        return self

    def to_dict(self) -> dict:
        return {
            "basis_order": pauli_labels(2),
            "re": self.chi.real.tolist(),
            "im": self.chi.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProcessMatrix":
        order = data.get("basis_order", pauli_labels(2))
        if list(order) != pauli_labels(2):
            raise ValidationError(f"unexpected basis_order {order!r}")
        return cls(np.array(data["re"], dtype=float) + 1j * np.array(data["im"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ProcessMatrix":
        return cls.from_dict(json.loads(text))


def density_to_dict(rho: np.ndarray) -> dict:
    rho = np.asarray(rho, dtype=complex)
    return {"basis_order": list(PRODUCT_LABELS), "re": rho.real.tolist(), "im": rho.imag.tolist()}


def density_from_dict(data: dict) -> np.ndarray:
    return np.array(data["re"], dtype=float) + 1j * np.array(data["im"], dtype=float)


def _as_chi(chi) -> np.ndarray:
    return chi.chi if isinstance(chi, ProcessMatrix) else np.asarray(chi, dtype=complex)


def chi_to_choi(chi) -> np.ndarray:
    p = _vec_basis()
    return p @ _as_chi(chi) @ p.conj().T


def choi_to_chi(choi: np.ndarray) -> np.ndarray:
    p = _vec_basis()
    return p.conj().T @ choi @ p / 16


def chi_to_superop(chi) -> np.ndarray:
    """Column-stacking superoperator ``S`` with ``vec(E(rho)) = S vec(rho)``."""
    return choi_to_superop(chi_to_choi(chi))


def choi_to_superop(choi: np.ndarray) -> np.ndarray:
    # J[(j,a),(l,b)] = E(|j><l|)_ab ; S[(b,a),(l,j)] = E(|j><l|)_ab
    d = 4
    j = choi.reshape(d, d, d, d)  # j, a, l, b
    return j.transpose(3, 1, 2, 0).reshape(d * d, d * d)


def superop_to_choi(superop: np.ndarray) -> np.ndarray:
    d = 4
    s = superop.reshape(d, d, d, d)  # b, a, l, j
    return s.transpose(3, 1, 2, 0).reshape(d * d, d * d)


def superop_to_chi(superop: np.ndarray) -> np.ndarray:
    return choi_to_chi(superop_to_choi(superop))


def kraus_to_chi(kraus_ops) -> np.ndarray:
    basis = pauli_product_basis(2)
    coeffs = np.array([[np.trace(a @ k) / 4 for a in basis] for k in kraus_ops])
    return coeffs.T @ coeffs.conj()


def choi_to_kraus(choi: np.ndarray, tol: float = 1e-12) -> list[np.ndarray]:
    w, v = np.linalg.eigh(hermitize(choi))
    return [np.sqrt(wi) * unvec(v[:, i]) for i, wi in enumerate(w) if wi > tol]


def tp_residual(chi) -> float:
    chi = _as_chi(chi)
    basis = pauli_product_basis(2)
    total = np.einsum("mn,nba,mbc->ac", chi, basis.conj(), basis)
    return float(np.abs(total - np.eye(4)).max())


def unitary_to_chi(u: np.ndarray, atol: float = 1e-8) -> ProcessMatrix:
    """Rank-one process matrix of the unitary channel ``rho -> U rho U^dag``."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (4, 4):
        raise ValidationError(f"expected a 4x4 unitary, got shape {u.shape}")
    if np.abs(u.conj().T @ u - np.eye(4)).max() > atol:
        raise ValidationError("matrix is not unitary")
    return ProcessMatrix(kraus_to_chi([u]))


def apply_chi(chi, rho: np.ndarray) -> np.ndarray:
    """Apply the operator-sum map ``sum_mn chi_mn A_m rho A_n^dag``.

    ``rho`` may be a single 4x4 matrix or a stack of shape ``(k, 4, 4)``.
    """
    chi = _as_chi(chi)
    rho = np.asarray(rho, dtype=complex)
    if chi.shape != (16, 16) or rho.shape[-2:] != (4, 4):
        raise ValueError(f"dimension mismatch: chi {chi.shape}, rho {rho.shape}")
    choi = chi_to_choi(chi).reshape(4, 4, 4, 4)  # j, a, l, b
    return np.einsum("...jl,jalb->...ab", rho, choi)


def apply_choi_pure(choi: np.ndarray, psis: np.ndarray) -> np.ndarray:
    """Outputs ``E(|psi><psi|)`` for a stack of kets, shape ``(k, 4, 4)``."""
    j = choi.reshape(4, 4, 4, 4)
    return np.einsum("kj,kl,jalb->kab", psis, psis.conj(), j, optimize=True)


def compose_chi(chi_second, chi_first) -> ProcessMatrix:
    """Process matrix of ``E_second o E_first`` (first applied first)."""
    s = chi_to_superop(chi_second) @ chi_to_superop(chi_first)
    return ProcessMatrix(hermitize(superop_to_chi(s)))


def depolarizing_chi() -> ProcessMatrix:
    return ProcessMatrix(np.eye(16) / 16)


def random_cptp_chi(rng: np.random.Generator, rank: int = 4) -> ProcessMatrix:
    """Random CPTP map from a Haar-random isometry split into Kraus operators."""
    v = haar_random_unitary(4 * rank, rng)[:, :4]
    kraus = [v[4 * k:4 * (k + 1)] for k in range(rank)]
    return ProcessMatrix(hermitize(kraus_to_chi(kraus)))

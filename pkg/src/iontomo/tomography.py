"""16-input x 9-basis process tomography: data synthesis and reconstruction."""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Union

import numpy as np

from .quantum_core import (
    KET_D,
    KET_S,
    PRODUCT_LABELS,
    ProcessMatrix,
    _vec_basis,
    apply_chi,
    choi_to_chi,
    chi_to_choi,
    hermitize,
)
from .pulse_engine import NumericalError

log = logging.getLogger(__name__)

BASES = ("X", "Y", "Z")
OUTCOMES = PRODUCT_LABELS  # (DD, DS, SD, SS)

SINGLE_QUBIT_INPUTS = (
    KET_S,
    KET_D,
    (KET_D + 1j * KET_S) / math.sqrt(2),
    (KET_D + KET_S) / math.sqrt(2),
)

# rotation applied before a D/S readout; u^dag|D> is the + eigenstate
_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
BASIS_ROTATIONS = {
    "Z": np.eye(2, dtype=complex),
    "X": _H,
    "Y": _H @ np.diag([1, -1j]),
}

GateEvaluator = Union[Callable[[np.ndarray], np.ndarray], ProcessMatrix]


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeasurementSetting:
    bases: tuple[str, str]  # (ion2, ion1)
    projectors: np.ndarray  # (4, 4, 4), outcome order DD, DS, SD, SS


@dataclass(frozen=True)
class MLEOptions:
    max_iters: int = 5000
    tol: float = 1e-10
    dilution: float = 1.0
    # projected-gradient refinement after the fixed-point loop; None = exact datasets only
    polish: bool | None = None
    polish_iters: int = 3000

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.dilution <= 1:
            raise ValueError("dilution must lie in (0, 1]")
        if self.max_iters < 1 or self.polish_iters < 0:
            raise ValueError("iteration limits must be positive")


@dataclass
class TomographyDataset:
    """Counts (or exact frequencies) for all 16 x 9 settings.

    ``counts`` has shape ``(16, 9, 4)``; input ``k`` is ``(i, j) = divmod(k, 4)``
    (1-based in files) and setting ``s`` is ``(a, b) = divmod(s, 3)`` into
    :data:`BASES`.
    """

    counts: np.ndarray
    shots: int | None
    exact: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.shape != (16, 9, 4):
            raise ProtocolError(f"dataset must have shape (16, 9, 4), got {self.counts.shape}")

    @property
    def n_records(self) -> int:
        return 144

    def frequencies(self) -> np.ndarray:
        tot = self.counts.sum(axis=-1, keepdims=True)
        return self.counts / tot

    def to_dict(self) -> dict:
        records = []
        for k, s in itertools.product(range(16), range(9)):
            i, j = divmod(k, 4)
            a, b = divmod(s, 3)
            c = self.counts[k, s]
            records.append({
                "input": [i + 1, j + 1],
                "setting": [BASES[a], BASES[b]],
                "counts": c.tolist() if self.exact else [int(x) for x in c],
            })
        meta = {"shots": self.shots, "labels": list(OUTCOMES), **self.metadata}
        if self.exact:
            meta["mode"] = "exact"
        return {"metadata": meta, "records": records}

    @classmethod
    def from_dict(cls, data: dict) -> "TomographyDataset":
        meta = dict(data["metadata"])
        if list(meta.get("labels", OUTCOMES)) != list(OUTCOMES):
            raise ProtocolError(f"unexpected outcome labels {meta.get('labels')!r}")
        counts = np.full((16, 9, 4), np.nan)
        for rec in data["records"]:
            i, j = rec["input"]
            a, b = (BASES.index(x) for x in rec["setting"])
            counts[4 * (i - 1) + (j - 1), 3 * a + b] = rec["counts"]
        if np.isnan(counts).any():
            raise ProtocolError("dataset is missing records")
        exact = meta.pop("mode", None) == "exact"
        shots = meta.pop("shots", None)
        meta.pop("labels", None)
        return cls(counts, shots, exact, meta)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TomographyDataset":
        return cls.from_dict(json.loads(text))


def tomography_input_states() -> np.ndarray:
    """The 16 product input kets, shape (16, 4), ordered (ion2 index, ion1 index)."""
    return np.array([np.kron(a, b) for a, b in itertools.product(SINGLE_QUBIT_INPUTS, repeat=2)])


def measurement_settings() -> list[MeasurementSetting]:
    out = []
    for a, b in itertools.product(BASES, repeat=2):
        u = np.kron(BASIS_ROTATIONS[a], BASIS_ROTATIONS[b])
        proj = np.array([np.outer(u.conj().T[:, o], u[o]) for o in range(4)])
        out.append(MeasurementSetting((a, b), proj))
    return out


@lru_cache(maxsize=1)
def _design() -> np.ndarray:
    """Choi-space effects ``rho_in^T (x) Pi``, shape (144*4, 16, 16)."""
    psis = tomography_input_states()
    settings = measurement_settings()
    effects = []
    for psi in psis:
        rho_t = np.outer(psi, psi.conj()).T
        for s in settings:
            for proj in s.projectors:
                effects.append(np.kron(rho_t, proj))
    arr = np.array(effects)
    arr.setflags(write=False)
    return arr


def _evaluate(gate: GateEvaluator, rho: np.ndarray) -> np.ndarray:
    if isinstance(gate, ProcessMatrix):
        return apply_chi(gate, rho)
    return np.asarray(gate(rho), dtype=complex)


def outcome_probabilities(gate: GateEvaluator) -> np.ndarray:
    """Exact outcome probabilities, shape (16, 9, 4)."""
    psis = tomography_input_states()
    settings = measurement_settings()
    probs = np.empty((16, 9, 4))
    for k, psi in enumerate(psis):
        out = _evaluate(gate, np.outer(psi, psi.conj()))
        for s, setting in enumerate(settings):
            probs[k, s] = np.real(np.einsum("oab,ba->o", setting.projectors, out))
    if probs.min() < -1e-9 or np.abs(probs.sum(axis=-1) - 1).max() > 1e-6:
        raise NumericalError("gate produced invalid outcome probabilities")
    probs = np.clip(probs, 0, None)
    return probs / probs.sum(axis=-1, keepdims=True)


def exact_probabilities(gate: GateEvaluator) -> TomographyDataset:
    """Infinite-statistics dataset holding the outcome probabilities."""
    return TomographyDataset(outcome_probabilities(gate), None, exact=True)


def simulate_dataset(gate: GateEvaluator, shots: int, rng: np.random.Generator, metadata: dict | None = None) -> TomographyDataset:
    """Multinomial projection-noise counts for every setting."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    probs = outcome_probabilities(gate)
    counts = rng.multinomial(shots, probs.reshape(-1, 4)).reshape(16, 9, 4)
    return TomographyDataset(counts, shots, metadata=dict(metadata or {}))


@lru_cache(maxsize=1)
def _design_flat() -> np.ndarray:
    arr = np.ascontiguousarray(_design().reshape(-1, 256))
    arr.setflags(write=False)
    return arr


def _probs_from_choi(choi: np.ndarray) -> np.ndarray:
    # p_k = tr(E_k J)
    return np.real(_design_flat() @ np.ascontiguousarray(choi.T).reshape(-1))


def log_likelihood(chi, ds: TomographyDataset) -> float:
    """Multinomial log-likelihood ``sum f log p`` (weights are counts or frequencies)."""
    chi = chi.chi if isinstance(chi, ProcessMatrix) else chi
    p = np.clip(_probs_from_choi(chi_to_choi(chi)), 1e-12, None)
    f = ds.counts.reshape(-1)
    return float(np.sum(f * np.log(p)))


@lru_cache(maxsize=1)
def _lin_inv_matrix() -> tuple[np.ndarray, int]:
    p = _vec_basis()
    # prob_k = sum_mn chi_mn (P^dag E_k P)_nm
    m = np.einsum("an,kab,bm->kmn", p.conj(), _design(), p).reshape(len(_design()), 256)
    rank = np.linalg.matrix_rank(m)
    return m, rank


def linear_inversion(ds: TomographyDataset) -> np.ndarray:
    """Least-squares chi from outcome frequencies; Hermitian, not necessarily PSD."""
    m, rank = _lin_inv_matrix()
    if rank < 256:
        raise ProtocolError(f"tomography design is rank deficient ({rank} < 256)")
    f = ds.frequencies().reshape(-1)
    x, *_ = np.linalg.lstsq(m, f.astype(complex), rcond=None)
    return hermitize(x.reshape(16, 16))


def _tp_normalize(choi: np.ndarray) -> np.ndarray:
    """Rescale ``(lam^-1/2 (x) I) J (lam^-1/2 (x) I)`` so that tr_out J = I."""
    lam = np.einsum("iaja->ij", choi.reshape(4, 4, 4, 4))
    w, v = np.linalg.eigh(hermitize(lam))
    inv_sqrt = (v / np.sqrt(w)) @ v.conj().T
    left = np.kron(inv_sqrt, np.eye(4))
    return hermitize(left @ choi @ left)


def _project_tp(x: np.ndarray) -> np.ndarray:
    lam = np.einsum("iaja->ij", x.reshape(4, 4, 4, 4))
    return x - np.kron(lam - np.eye(4), np.eye(4)) / 4


def _project_psd(x: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(x))
    return (v * np.clip(w, 0, None)) @ v.conj().T


def project_cptp(choi: np.ndarray, tol: float = 1e-12, max_iters: int = 5000) -> np.ndarray:
    """Euclidean projection of a Hermitian Choi matrix onto the CPTP set (Dykstra)."""
    x = hermitize(np.asarray(choi, dtype=complex))
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_iters):
        y = _project_tp(x + p)
        p = x + p - y
        x_new = _project_psd(y + q)
        q = y + q - x_new
        done = np.abs(x_new - x).max() < tol
        x = x_new
        if done:
            break
    return _project_tp(x)


def _polish(choi: np.ndarray, f: np.ndarray, ll: float, max_iters: int, tol: float) -> tuple[np.ndarray, float, list[float]]:
    """Projected-gradient ascent with Armijo backtracking.

    The multiplicative update moves eigenvalues in proportion to their size,
    so with exactly reproducible data and a rank-deficient optimum it creeps
    toward the boundary. Euclidean steps projected onto the CPTP set do not.
    """
    effects = _design_flat()
    pos = f > 0

    def loglik(c):
        p = _probs_from_choi(c)
        if np.any(p[pos] <= 0):
            return -np.inf
        return float(np.sum(f[pos] * np.log(p[pos])))

    step = 1e-2
    history = []
    for _ in range(max_iters):
        p = np.clip(_probs_from_choi(choi), 1e-15, None)
        grad = ((f / p) @ effects).reshape(16, 16)
        d = project_cptp(choi + step * grad) - choi
        slope = float(np.real(np.trace(grad @ d)))
        a = 1.0
        ll_new = loglik(choi + d)
        while ll_new < ll + 1e-4 * a * slope and a > 1e-10:
            a *= 0.5
            ll_new = loglik(choi + a * d)
        if ll_new < ll:
            break
        gain = ll_new - ll
        choi, ll = hermitize(choi + a * d), ll_new
        history.append(ll)
        if a == 1.0:
            step *= 2
        elif a < 0.25:
            step *= 0.5
        if gain <= tol * abs(ll) and len(history) > 5:
            break
    return choi, ll, history


def project_to_cptp_start(chi: np.ndarray) -> ProcessMatrix:
    """Clip negative eigenvalues of a linear-inversion chi and enforce TP."""
    w, v = np.linalg.eigh(hermitize(chi))
    w = np.clip(w, 1e-9, None)
    psd = (v * w) @ v.conj().T
    choi = _tp_normalize(chi_to_choi(psd))
    return ProcessMatrix(hermitize(choi_to_chi(choi)))


@dataclass
class MLEResult:
    chi: ProcessMatrix
    log_likelihood: float
    iterations: int
    converged: bool
    history: list[float]
    warnings: list[str] = field(default_factory=list)


def mle_reconstruct(
    ds: TomographyDataset, opts: MLEOptions | None = None, init: ProcessMatrix | None = None
) -> MLEResult:
    """Iterative maximum-likelihood CPTP reconstruction.

    Works on the Choi operator ``J`` (input (x) output). Each step forms
    ``K = sum_k (f_k / p_k) E_k`` and updates ``J <- L K J K L`` with
    ``L = lam^{-1/2} (x) I`` restoring ``tr_out J = I``. A step that would
    lower the likelihood is retried with ``K`` diluted toward the identity.

    Starts from the maximally mixed map unless ``init`` is given. With
    ``opts.polish`` (default: exact datasets only) a projected-gradient stage
    refines the fixed point.
    """
    opts = opts or MLEOptions()
    effects = _design_flat()
    f = ds.counts.reshape(-1)
    notes = []

    def probs(choi):
        p = _probs_from_choi(choi)
        if np.any((p < 1e-12) & (f > 0)):
            if "clamped" not in notes:
                notes.append("clamped")
        return np.clip(p, 1e-12, None)

    def loglik(p):
        return float(np.sum(f * np.log(p)))

    if init is None:
        choi = np.eye(16, dtype=complex) / 4  # maximally mixed CPTP map
    else:
        # pull strictly inside the PSD cone so zero eigenvalues can move
        choi = 0.999 * init.choi() + 0.001 * np.eye(16) / 4
    p = probs(choi)
    ll = loglik(p)
    history = [ll]
    dilution = opts.dilution
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        k_op = ((f / p) @ effects).reshape(16, 16)
        scale = np.real(np.trace(k_op)) / 16
        while True:
            k_d = dilution * k_op + (1 - dilution) * scale * np.eye(16)
            trial = _tp_normalize(k_d @ choi @ k_d)
            p_new = probs(trial)
            ll_new = loglik(p_new)
            if ll_new >= ll - 1e-12 * abs(ll) or dilution < 1e-8:
                break
            dilution *= 0.5
        if ll_new < ll:
            # dilution exhausted; keep the best iterate
            break
        gain = ll_new - ll
        choi, p, ll = trial, p_new, ll_new
        history.append(ll)
        if gain <= opts.tol * abs(ll):
            converged = True
            break
        dilution = min(opts.dilution, dilution * 2)

    polish = ds.exact if opts.polish is None else opts.polish
    if polish:
        choi, ll, extra = _polish(choi, f, ll, opts.polish_iters, 1e-15)
        history.extend(extra)

    if not converged:
        notes.append(f"not converged after {it} iterations")
        log.warning("MLE did not converge (%d iterations)", it)
    if "clamped" in notes:
        notes[notes.index("clamped")] = "zero predicted probability with nonzero counts clamped to 1e-12"
    chi = ProcessMatrix(hermitize(choi_to_chi(choi)))
    return MLEResult(chi, ll, it, converged, history, notes)

"""Gate performance metrics computed from a process matrix.

Mean quantities are averages over Haar-random pure two-qubit inputs; the
same ensemble is used for the fidelity, the linear entropy and the
concurrence change.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .quantum_core import ProcessMatrix, chi_to_choi, apply_choi_pure, haar_random_pure_state, unitary_to_chi

DEFAULT_ENSEMBLE = 50_000
_YY = np.kron(np.array([[0, -1j], [1j, 0]]), np.array([[0, -1j], [1j, 0]]))


def _chi(chi) -> np.ndarray:
    return chi.chi if isinstance(chi, ProcessMatrix) else np.asarray(chi, dtype=complex)


def process_fidelity(chi, chi_ideal) -> float:
    """``tr(chi_ideal chi)``."""
    return float(np.real(np.trace(_chi(chi_ideal) @ _chi(chi))))


def choi_fidelity(chi_a, chi_b) -> float:
    """Uhlmann fidelity of the normalized Choi states.

    Reduces to :func:`process_fidelity` when either map is unitary.
    """
    a = chi_to_choi(_chi(chi_a)) / 4
    b = chi_to_choi(_chi(chi_b)) / 4
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    sqrt_a = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
    m = sqrt_a @ b @ sqrt_a
    ev = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    return float(np.sum(np.sqrt(np.clip(ev, 0, None))) ** 2)


def mean_fidelity_closed_form(f_p: float, d: int = 4) -> float:
    return (d * f_p + 1) / (d + 1)


def linear_entropy(rho: np.ndarray) -> np.ndarray:
    """Normalized linear entropy ``4/3 (1 - tr rho^2)``; accepts stacks."""
    rho = np.asarray(rho)
    purity = np.real(np.einsum("...ab,...ba->...", rho, rho))
    return 4.0 / 3.0 * (1 - purity)


def concurrence(rho: np.ndarray) -> np.ndarray | float:
    """Wootters concurrence of one or a stack of 4x4 density matrices.

    The lambdas are the singular values of ``sqrt(rho) YY sqrt(rho)^*``, which
    equal the square roots of the eigenvalues of ``rho rho~`` but stay accurate
    for rank-deficient states.
    """
    rho = np.asarray(rho, dtype=complex)
    single = rho.ndim == 2
    rho = rho[None] if single else rho
    w, v = np.linalg.eigh(0.5 * (rho + np.swapaxes(rho.conj(), -1, -2)))
    root = (v * np.sqrt(np.clip(w, 0, None))[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)
    lam = np.linalg.svd(root @ _YY @ root.conj(), compute_uv=False)  # descending
    c = np.maximum(0.0, lam[..., 0] - lam[..., 1] - lam[..., 2] - lam[..., 3])
    return float(c[0]) if single else c


def concurrence_pure(psis: np.ndarray) -> np.ndarray:
    """``2 |a d - b c|`` for kets ``(a, b, c, d)``; accepts stacks."""
    psis = np.asarray(psis)
    return 2 * np.abs(psis[..., 0] * psis[..., 3] - psis[..., 1] * psis[..., 2])


@dataclass
class Ensemble:
    """Haar-sampled inputs reused across metrics."""

    states: np.ndarray

    @classmethod
    def sample(cls, n: int, rng: np.random.Generator) -> "Ensemble":
        if n < 1:
            raise ValueError("ensemble size must be >= 1")
        return cls(haar_random_pure_state(4, rng, size=n))

    def __len__(self):
        return len(self.states)


def _outputs(chi, ens: Ensemble) -> np.ndarray:
    return apply_choi_pure(chi_to_choi(_chi(chi)), ens.states)


def _fidelities(chi, u_ideal, ens: Ensemble, outs=None) -> np.ndarray:
    outs = _outputs(chi, ens) if outs is None else outs
    targets = ens.states @ np.asarray(u_ideal).T
    return np.real(np.einsum("ka,kab,kb->k", targets.conj(), outs, targets))


def mean_fidelity_mc(chi, u_ideal: np.ndarray, n: int, rng: np.random.Generator) -> float:
    return float(_fidelities(chi, u_ideal, Ensemble.sample(n, rng)).mean())


def mean_fidelity_mc_stats(chi, u_ideal, n, rng) -> tuple[float, float]:
    """Mean fidelity and its Monte-Carlo standard error."""
    f = _fidelities(chi, u_ideal, Ensemble.sample(n, rng))
    return float(f.mean()), float(f.std(ddof=1) / np.sqrt(len(f)))


def mean_linear_entropy(chi, n: int, rng: np.random.Generator) -> float:
    return float(linear_entropy(_outputs(chi, Ensemble.sample(n, rng))).mean())


def max_delta_concurrence(chi, n: int, rng: np.random.Generator) -> float:
    ens = Ensemble.sample(n, rng)
    return float(np.max(concurrence(_outputs(chi, ens)) - concurrence_pure(ens.states)))


@dataclass
class MetricReport:
    f_p: float
    f_mean: float
    f_mean_closed_form: float
    s_lin_mean: float
    max_delta_c: float
    n_samples: int
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        return cls(**data)

    def table_row(self, seq: str = "", description: str = "") -> dict:
        return {
            "seq": seq,
            "F_p": self.f_p,
            "F_mean": self.f_mean,
            "S_lin_mean": self.s_lin_mean,
            "max_dC": self.max_delta_c,
            "description": description,
            "errors": dict(self.errors),
        }


def ensemble_metrics(chi, u_ideal, ens: Ensemble) -> dict:
    outs = _outputs(chi, ens)
    return {
        "f_mean": float(_fidelities(chi, u_ideal, ens, outs).mean()),
        "s_lin_mean": float(linear_entropy(outs).mean()),
        "max_delta_c": float(np.max(concurrence(outs) - concurrence_pure(ens.states))),
    }


def metric_report(
    chi, u_ideal: np.ndarray, n: int = DEFAULT_ENSEMBLE, rng: np.random.Generator | None = None,
    ensemble: Ensemble | None = None,
) -> MetricReport:
    """All table metrics of ``chi`` against the unitary target ``u_ideal``."""
    if ensemble is None:
        if rng is None:
            raise ValueError("need an rng or a pre-sampled ensemble")
        ensemble = Ensemble.sample(n, rng)
    f_p = process_fidelity(chi, unitary_to_chi(u_ideal))
    m = ensemble_metrics(chi, u_ideal, ensemble)
    return MetricReport(
        f_p=f_p,
        f_mean=m["f_mean"],
        f_mean_closed_form=mean_fidelity_closed_form(f_p),
        s_lin_mean=m["s_lin_mean"],
        max_delta_c=m["max_delta_c"],
        n_samples=len(ensemble),
    )


TABLE_COLUMNS = ("seq", "F_p", "F_mean", "S_lin_mean", "max_dC", "description",
                 "err_F_p", "err_F_mean", "err_S_lin_mean", "err_max_dC")


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    if isinstance(x, (int, float, np.floating)):
        return f"{float(x):.6g}"
    return str(x)


def rows_to_csv(rows: list[dict]) -> str:
    """CSV with table columns; numbers at 6 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    key_map = {"F_p": "f_p", "F_mean": "f_mean", "S_lin_mean": "s_lin_mean", "max_dC": "max_delta_c"}
    for r in rows:
        errs = r.get("errors", {})
        w.writerow([_fmt(r.get(c)) for c in TABLE_COLUMNS[:6]]
                   + [_fmt(errs.get(key_map[c])) for c in ("F_p", "F_mean", "S_lin_mean", "max_dC")])
    return buf.getvalue()


def report_json(report: MetricReport, seq: str = "", description: str = "") -> str:
    return json.dumps(report.table_row(seq, description), indent=2, sort_keys=True)

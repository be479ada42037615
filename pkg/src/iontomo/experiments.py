"""End-to-end studies: single gates, concatenated gates and pulse shaping."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .analysis import DEFAULT_ENSEMBLE, Ensemble, MetricReport, ensemble_metrics, metric_report, process_fidelity
from .pulse_engine import (
    NoiseModel,
    TrapParams,
    build_sequence,
    gate_channel,
    ideal_target,
)
from .quantum_core import ProcessMatrix, compose_chi, unitary_to_chi
from .tomography import (
    MLEOptions,
    exact_probabilities,
    mle_reconstruct,
    outcome_probabilities,
    simulate_dataset,
    TomographyDataset,
)

log = logging.getLogger(__name__)

CALIBRATION_WINDOW = (0.88, 0.90)
CALIBRATION_GRID = np.linspace(0.0, 5000.0, 10)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str = "A"
    repetitions: int = 1
    trap: TrapParams = field(default_factory=TrapParams)
    noise: NoiseModel = field(default_factory=NoiseModel)
    shots: int = 250
    seed: int = 0
    mle: MLEOptions = field(default_factory=MLEOptions)
    ensemble_n: int = DEFAULT_ENSEMBLE
    pulse_shape: str = "ramped"
    exact: bool = False
    bootstrap: int = 50
    calibrate_detuning: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.variant not in ("A", "B"):
            raise ConfigError(f"variant must be 'A' or 'B', got {self.variant!r}")
        if self.repetitions not in (1, 2):
            raise ConfigError(f"repetitions must be 1 or 2, got {self.repetitions!r}")
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if self.ensemble_n < 1:
            raise ConfigError("ensemble_n must be >= 1")
        if self.bootstrap < 0:
            raise ConfigError("bootstrap must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        nested = {"trap": TrapParams, "noise": NoiseModel, "mle": MLEOptions}
        top = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in top:
                raise ConfigError(f"unknown config key {key!r}")
            if key in nested:
                sub = nested[key]
                names = {f.name for f in dataclasses.fields(sub)}
                if not isinstance(value, dict):
                    raise ConfigError(f"config key {key!r} must be an object")
                for k in value:
                    if k not in names:
                        raise ConfigError(f"unknown config key {key}.{k!r}")
                try:
                    value = sub(**value)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"invalid {key!r}: {exc}") from exc
            kwargs[key] = value
        if kwargs.get("repetitions", 1) == 2 and "correlate_across_gates" not in data.get("noise", {}):
            raise ConfigError("repetitions=2 requires noise.correlate_across_gates to be set explicitly")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def gate_time(variant: str, trap: TrapParams, repetitions: int = 1) -> float:
    """Summed pulse lengths theta / Omega (seconds)."""
    return repetitions * build_sequence(variant).duration(trap)


@lru_cache(maxsize=32)
def calibrate_detuning(
    trap: TrapParams, noise: NoiseModel, variant: str = "A",
    window: tuple[float, float] = CALIBRATION_WINDOW,
) -> tuple[float, float]:
    """Find the static-detuning spread putting the single-gate F_p in ``window``.

    Scans a 10-point grid, then bisects inside the bracketing interval.
    Returns ``(sigma, F_p)``.
    """
    seq = build_sequence(variant)
    target = unitary_to_chi(ideal_target(variant))

    def fp(sigma):
        ch = gate_channel(seq, trap, replace(noise, detuning_sigma=float(sigma)))
        return process_fidelity(ch.chi, target)

    lo, hi = window
    prev = None
    for sigma in CALIBRATION_GRID:
        f = fp(sigma)
        if lo <= f <= hi:
            return float(sigma), f
        if f < lo:
            if prev is None:
                raise ValueError("window unreachable: noise-free fidelity already below it")
            a, b = prev, sigma
            for _ in range(60):
                mid = 0.5 * (a + b)
                f = fp(mid)
                if lo <= f <= hi:
                    return float(mid), f
                a, b = (mid, b) if f > hi else (a, mid)
            break
        prev = sigma
    raise ValueError(f"no detuning spread on the grid reaches F_p in {window}")


def resolve_noise(cfg: ExperimentConfig) -> NoiseModel:
    if not cfg.calibrate_detuning:
        return cfg.noise
    sigma, _ = calibrate_detuning(cfg.trap, replace(cfg.noise, include_offresonant_carrier=False))
    return replace(cfg.noise, detuning_sigma=sigma)


@dataclass
class GateReport:
    chi: ProcessMatrix
    metrics: MetricReport
    config: dict
    t_gate: float
    true_f_p: float
    mle_converged: bool = True
    mle_iterations: int = 0
    composed_errors: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def variant(self) -> str:
        return self.config["variant"]

    @property
    def repetitions(self) -> int:
        return self.config["repetitions"]

    def to_dict(self) -> dict:
        return {
            "chi": self.chi.to_dict(),
            "metrics": self.metrics.to_dict(),
            "config": self.config,
            "t_gate": self.t_gate,
            "true_f_p": self.true_f_p,
            "mle_converged": self.mle_converged,
            "mle_iterations": self.mle_iterations,
            "composed_errors": self.composed_errors,
            "warnings": self.warnings,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GateReport":
        data = dict(data)
        data["chi"] = ProcessMatrix.from_dict(data["chi"])
        data["metrics"] = MetricReport.from_dict(data["metrics"])
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GateReport":
        return cls.from_dict(json.loads(text))

    def description(self) -> str:
        if self.repetitions == 2:
            return f"2xCNOT({self.variant})"
        return f"single gate CNOT({self.variant})"


def _streams(seed: int) -> dict[str, np.random.SeedSequence]:
    names = ("dataset", "ensemble", "bootstrap")
    return dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))


def parametric_bootstrap(
    chi_hat: ProcessMatrix,
    shots: int,
    n_resamples: int,
    seed_seq: np.random.SeedSequence,
    u_ideal: np.ndarray,
    ensemble: Ensemble | None = None,
    opts: MLEOptions | None = None,
    threads: int = 1,
    composed: bool = False,
) -> tuple[dict, dict]:
    """Projection-noise error bars by resampling counts from ``chi_hat``.

    Each replicate draws multinomial counts from the reconstructed
    probabilities, re-runs the MLE and recomputes the metrics. Returns the
    standard deviations for the gate metrics and, if ``composed``, for the
    metrics of the replicate composed with itself against the identity.
    """
    if n_resamples < 2:
        return {}, {}
    probs = outcome_probabilities(chi_hat)
    target = unitary_to_chi(u_ideal)
    ident = unitary_to_chi(np.eye(4))
    children = seed_seq.spawn(n_resamples)

    def one(child):
        rng = np.random.default_rng(child)
        counts = rng.multinomial(shots, probs.reshape(-1, 4)).reshape(16, 9, 4)
        res = mle_reconstruct(TomographyDataset(counts, shots), opts, init=chi_hat)
        row = {"f_p": process_fidelity(res.chi, target)}
        if ensemble is not None:
            row.update(ensemble_metrics(res.chi, u_ideal, ensemble))
        comp = {}
        if composed:
            c2 = compose_chi(res.chi, res.chi)
            comp["f_p"] = process_fidelity(c2, ident)
            if ensemble is not None:
                m = ensemble_metrics(c2, np.eye(4), ensemble)
                comp.update({k: m[k] for k in ("f_mean", "s_lin_mean")})
        return row, comp

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, children))
    else:
        rows = [one(c) for c in children]

    def spread(items):
        if not items or not items[0]:
            return {}
        return {k: float(np.std([r[k] for r in items], ddof=1)) for k in items[0]}

    return spread([r for r, _ in rows]), spread([c for _, c in rows])


def _run_tomography(cfg: ExperimentConfig, noise: NoiseModel) -> GateReport:
    trap = cfg.trap
    seq = build_sequence(cfg.variant, cfg.pulse_shape)
    channel = gate_channel(seq, trap, noise, repetitions=cfg.repetitions)
    u_ideal = ideal_target(cfg.variant, cfg.repetitions)
    streams = _streams(cfg.seed)

    if cfg.exact:
        ds = exact_probabilities(channel.chi)
    else:
        ds = simulate_dataset(channel.chi, cfg.shots, np.random.default_rng(streams["dataset"]))
    res = mle_reconstruct(ds, cfg.mle)
    ensemble = Ensemble.sample(cfg.ensemble_n, np.random.default_rng(streams["ensemble"]))
    metrics = metric_report(res.chi, u_ideal, ensemble=ensemble)

    composed_errors = {}
    if not cfg.exact and cfg.bootstrap >= 2:
        errs, composed_errors = parametric_bootstrap(
            res.chi, cfg.shots, cfg.bootstrap, streams["bootstrap"], u_ideal,
            ensemble=ensemble, opts=cfg.mle, threads=cfg.threads, composed=cfg.repetitions == 1,
        )
        metrics.errors = errs

    echo = cfg.to_dict()
    echo.pop("threads")  # results must not depend on it
    echo["noise"] = dataclasses.asdict(noise)
    return GateReport(
        chi=res.chi,
        metrics=metrics,
        config=echo,
        t_gate=gate_time(cfg.variant, trap, cfg.repetitions),
        true_f_p=process_fidelity(channel.chi, unitary_to_chi(u_ideal)),
        mle_converged=res.converged,
        mle_iterations=res.iterations,
        composed_errors=composed_errors,
        warnings=channel.warnings + res.warnings,
    )


def run_single_gate_tomography(cfg: ExperimentConfig) -> GateReport:
    """Gate simulation, synthetic tomography, MLE and metrics for one CNOT."""
    if cfg.repetitions != 1:
        raise ConfigError("single-gate tomography needs repetitions = 1")
    return _run_tomography(cfg, resolve_noise(cfg))


def run_concatenated_tomography(cfg: ExperimentConfig) -> GateReport:
    """Tomography of two back-to-back CNOTs (ideal target: identity)."""
    if cfg.repetitions != 2:
        raise ConfigError("concatenated tomography needs repetitions = 2")
    return _run_tomography(cfg, resolve_noise(cfg))


def predict_concatenated_from_single(
    single: GateReport, n: int | None = None, rng: np.random.Generator | None = None,
    ensemble: Ensemble | None = None,
) -> MetricReport:
    """Metrics of the single-gate map composed with itself, against the identity."""
    if single.repetitions != 1:
        raise ValueError("prediction needs a single-gate report")
    if ensemble is None:
        if rng is None:
            seed = single.config.get("seed", 0)
            rng = np.random.default_rng(_streams(seed)["ensemble"])
        ensemble = Ensemble.sample(n or single.metrics.n_samples, rng)
    composed = compose_chi(single.chi, single.chi)
    report = metric_report(composed, np.eye(4), ensemble=ensemble)
    report.errors = dict(single.composed_errors)
    return report


def shaped_vs_square_study(cfg: ExperimentConfig) -> tuple[GateReport, GateReport]:
    """Two tomographies that differ only in the pulse envelope.

    Both runs share the seed, so their projection noise is strongly
    correlated and the fidelity gap reflects the envelope.
    """
    if not cfg.noise.include_offresonant_carrier:
        raise ConfigError("pulse-shape study needs noise.include_offresonant_carrier = true")
    noise = resolve_noise(cfg)
    shaped = _run_tomography(replace(cfg, pulse_shape="ramped"), noise)
    square = _run_tomography(replace(cfg, pulse_shape="square"), noise)
    return shaped, square


@dataclass
class Discrepancy:
    d_f_p: float
    d_f_mean: float
    d_s_lin: float
    sigma_f_p: float
    sigma_f_mean: float
    sigma_s_lin: float
    exceeds_errors: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def compare_reports(concat: GateReport | MetricReport, predicted: MetricReport) -> Discrepancy:
    """Measured-minus-predicted differences and whether they exceed the combined errors."""
    m = concat.metrics if isinstance(concat, GateReport) else concat

    def combined(key):
        a, b = m.errors.get(key), predicted.errors.get(key)
        if a is None and b is None:
            return float("nan")
        return math.hypot(a or 0.0, b or 0.0)

    d = {
        "f_p": m.f_p - predicted.f_p,
        "f_mean": m.f_mean - predicted.f_mean,
        "s_lin_mean": m.s_lin_mean - predicted.s_lin_mean,
    }
    sig = {k: combined(k) for k in d}
    exceeds = {k: bool(not math.isnan(sig[k]) and abs(d[k]) > sig[k]) for k in d}
    return Discrepancy(d["f_p"], d["f_mean"], d["s_lin_mean"], sig["f_p"], sig["f_mean"], sig["s_lin_mean"], exceeds)

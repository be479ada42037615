"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 maximum-likelihood reconstruction did not converge.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import Ensemble, metric_report, report_json, rows_to_csv
from .charts import chi_charts
from .experiments import (
    ConfigError,
    ExperimentConfig,
    GateReport,
    compare_reports,
    predict_concatenated_from_single,
    run_concatenated_tomography,
    run_single_gate_tomography,
    shaped_vs_square_study,
    resolve_noise,
)
from .pulse_engine import NoiseModel, NumericalError, build_sequence, gate_channel, ideal_target, run_gate
from .quantum_core import ProcessMatrix, ValidationError, density_to_dict, ket_to_dm
from .tomography import (
    ProtocolError,
    exact_probabilities,
    linear_inversion,
    mle_reconstruct,
    simulate_dataset,
    tomography_input_states,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 2, 3, 4

log = logging.getLogger("iontomo")


class NotConverged(RuntimeError):
    pass


def load_config(path: str | None, args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    overrides = {
        "seed": args.seed, "shots": args.shots, "variant": getattr(args, "sequence", None),
        "repetitions": getattr(args, "repetitions", None), "threads": args.threads,
    }
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if getattr(args, "exact", False):
        data["exact"] = True
    if data.get("repetitions") == 2:
        data.setdefault("noise", {})
        data["noise"].setdefault("correlate_across_gates", NoiseModel().correlate_across_gates)
    return ExperimentConfig.from_dict(data)


def _write(out: Path, name: str, text: str, written: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)
    written[name] = hashlib.sha256(text.encode()).hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _manifest(out: Path, args, written: dict, start: float) -> None:
    manifest = {
        "command": args.command,
        "config": getattr(args, "config", None),
        "seed": getattr(args, "seed", None),
        "out": str(out),
        "version": __version__,
        "duration_s": round(time.time() - start, 3),
        "outputs": dict(sorted(written.items())),
    }
    (out / "manifest.json").write_text(_dump(manifest))


def cmd_simulate(args, written) -> None:
    cfg = load_config(args.config, args)
    out = Path(args.out)
    noise = resolve_noise(cfg)
    seq = build_sequence(cfg.variant, cfg.pulse_shape)
    psis = tomography_input_states()
    rhos = np.array([ket_to_dm(p) for p in psis])
    u = ideal_target(cfg.variant, cfg.repetitions)
    ideal = [u @ r @ u.conj().T for r in rhos]
    rng = np.random.default_rng(cfg.seed)
    noisy = run_gate(seq, rhos, cfg.trap, noise, rng, cfg.shots, repetitions=cfg.repetitions)
    inputs = [[i + 1, j + 1] for i in range(4) for j in range(4)]
    payload = {
        "variant": cfg.variant,
        "repetitions": cfg.repetitions,
        "inputs": inputs,
        "ideal": [density_to_dict(r) for r in ideal],
        "noisy": [density_to_dict(r) for r in noisy],
        "noise": dataclasses.asdict(noise),
        "draws": cfg.shots,
    }
    _write(out, "densities.json", _dump(payload), written)


def cmd_tomography(args, written) -> None:
    cfg = load_config(args.config, args)
    out = Path(args.out)
    noise = resolve_noise(cfg)
    seq = build_sequence(cfg.variant, cfg.pulse_shape)
    channel = gate_channel(seq, cfg.trap, noise, repetitions=cfg.repetitions)
    meta = {"seed": cfg.seed, "noise": dataclasses.asdict(noise), "variant": cfg.variant,
            "repetitions": cfg.repetitions}
    if cfg.exact:
        ds = exact_probabilities(channel.chi)
        ds.metadata.update(meta)
    else:
        ds = simulate_dataset(channel.chi, cfg.shots, np.random.default_rng(cfg.seed), metadata=meta)
    chi_lin = linear_inversion(ds)
    res = mle_reconstruct(ds, cfg.mle)
    _write(out, "dataset.json", _dump(ds.to_dict()), written)
    _write(out, "chi_linear.json", _dump(ProcessMatrix(chi_lin).to_dict()), written)
    mle_doc = res.chi.to_dict()
    mle_doc.update({"log_likelihood": res.log_likelihood, "iterations": res.iterations,
                    "converged": res.converged, "warnings": res.warnings})
    _write(out, "chi_mle.json", _dump(mle_doc), written)
    _write(out, "chi_true.json", _dump(channel.chi.to_dict()), written)
    if not res.converged:
        raise NotConverged(f"MLE stopped after {res.iterations} iterations")


TARGET_CHOICES = {"A": ("A", 1), "B": ("B", 1), "AA": ("A", 2), "BB": ("B", 2), "identity": ("identity", 1)}


def cmd_analyze(args, written) -> None:
    try:
        doc = json.loads(Path(args.chi).read_text())
        chi = ProcessMatrix.from_dict(doc.get("chi", doc))
    except (OSError, json.JSONDecodeError, KeyError, ValidationError) as exc:
        raise ConfigError(f"malformed chi file {args.chi}: {exc}") from exc
    variant, reps = TARGET_CHOICES[args.target]
    u = ideal_target(variant, reps)
    rng = np.random.default_rng(args.seed or 0)
    report = metric_report(chi, u, ensemble=Ensemble.sample(args.ensemble, rng))
    out = Path(args.out)
    _write(out, "metrics.json", report_json(report, args.target) + "\n", written)
    _write(out, "metrics.csv", rows_to_csv([report.table_row(args.target)]), written)
    for name, svg in chi_charts(chi.chi).items():
        _write(out, name, svg, written)


def cmd_experiment(args, written) -> None:
    cfg = load_config(args.config, args)
    out = Path(args.out)
    if cfg.repetitions == 1:
        report = run_single_gate_tomography(cfg)
    else:
        report = run_concatenated_tomography(cfg)
    rows = [report.metrics.table_row(cfg.variant * cfg.repetitions, report.description())]
    if cfg.repetitions == 1:
        pred = predict_concatenated_from_single(report)
        rows.append(pred.table_row(cfg.variant, f"CNOT({cfg.variant}) o CNOT({cfg.variant}) predicted"))
    _write(out, "gate_report.json", report.to_json() + "\n", written)
    _write(out, "table.csv", rows_to_csv(rows), written)
    if not report.mle_converged:
        raise NotConverged("MLE did not converge")


def cmd_shaping(args, written) -> None:
    cfg = load_config(args.config, args)
    if not cfg.noise.include_offresonant_carrier:
        cfg = dataclasses.replace(cfg, noise=dataclasses.replace(cfg.noise, include_offresonant_carrier=True))
    shaped, square = shaped_vs_square_study(cfg)
    out = Path(args.out)
    _write(out, "shaped_report.json", shaped.to_json() + "\n", written)
    _write(out, "square_report.json", square.to_json() + "\n", written)
    rows = [shaped.metrics.table_row(cfg.variant, "with pulse shaping"),
            square.metrics.table_row(cfg.variant, "no pulse shaping")]
    _write(out, "table.csv", rows_to_csv(rows), written)


def cmd_compare(args, written) -> None:
    try:
        single = GateReport.from_json(Path(args.single).read_text())
        concat = GateReport.from_json(Path(args.concat).read_text())
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
        raise ConfigError(f"malformed report: {exc}") from exc
    predicted = predict_concatenated_from_single(single)
    disc = compare_reports(concat, predicted)
    doc = {
        "measured": concat.metrics.table_row(concat.variant * 2, concat.description()),
        "predicted": predicted.table_row(single.variant, "composed single-gate prediction"),
        "discrepancy": disc.to_dict(),
    }
    _write(Path(args.out), "discrepancy.json", _dump(doc), written)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iontomo", description="Trapped-ion CNOT process tomography toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--shots", type=int)
        p.add_argument("--threads", type=int)

    def gate_flags(p):
        p.add_argument("--sequence", choices=("A", "B"))
        p.add_argument("--repetitions", type=int, choices=(1, 2))
        p.add_argument("--exact", action="store_true", help="use exact outcome probabilities")

    p = sub.add_parser("simulate", help="ideal and noisy outputs for the 16 tomography inputs")
    common(p)
    gate_flags(p)
    p = sub.add_parser("tomography", help="synthesize a dataset and reconstruct chi")
    common(p)
    gate_flags(p)
    p = sub.add_parser("experiment", help="full tomography study with error bars")
    common(p)
    gate_flags(p)
    p = sub.add_parser("shaping", help="shaped versus square pulse study")
    common(p)
    gate_flags(p)
    p = sub.add_parser("analyze", help="metrics and bar charts for a chi file")
    p.add_argument("chi")
    p.add_argument("--target", choices=tuple(TARGET_CHOICES), default="A")
    p.add_argument("--ensemble", type=int, default=50_000)
    common(p, config=False)
    p = sub.add_parser("compare", help="concatenated tomography versus composed prediction")
    p.add_argument("single")
    p.add_argument("concat")
    common(p, config=False)
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "tomography": cmd_tomography,
    "experiment": cmd_experiment,
    "shaping": cmd_shaping,
    "analyze": cmd_analyze,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("QPT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.threads is None:
        args.threads = os.cpu_count() or 1
    start = time.time()
    written: dict[str, str] = {}
    code = EXIT_OK
    try:
        COMMANDS[args.command](args, written)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ValidationError, ProtocolError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except NotConverged as exc:
        print(f"warning: {exc}", file=sys.stderr)
        code = EXIT_NOT_CONVERGED
    if written:
        _manifest(Path(args.out), args, written, start)
    return code


if __name__ == "__main__":
    sys.exit(main())

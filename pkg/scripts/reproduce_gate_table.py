"""Single-gate, concatenated and predicted rows of the gate comparison table.

Usage: python scripts/reproduce_gate_table.py [--seed N] [--ensemble N] [--bootstrap N] [--out table.csv]
"""

import argparse
from dataclasses import replace

from iontomo.analysis import rows_to_csv
from iontomo.experiments import (
    ExperimentConfig,
    compare_reports,
    predict_concatenated_from_single,
    run_concatenated_tomography,
    run_single_gate_tomography,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ensemble", type=int, default=50_000)
    ap.add_argument("--bootstrap", type=int, default=50)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--out", default="gate_table.csv")
    args = ap.parse_args()

    rows = []
    for variant in ("A", "B"):
        cfg = ExperimentConfig(variant=variant, calibrate_detuning=True, seed=args.seed,
                               ensemble_n=args.ensemble, bootstrap=args.bootstrap, threads=args.threads)
        single = run_single_gate_tomography(cfg)
        concat = run_concatenated_tomography(replace(cfg, repetitions=2, seed=args.seed + 1))
        pred = predict_concatenated_from_single(single)
        rows += [
            single.metrics.table_row(variant, single.description()),
            concat.metrics.table_row(variant * 2, concat.description()),
            pred.table_row(variant, "predicted from single gate"),
        ]
        d = compare_reports(concat, pred)
        print(f"{variant}: single F_p {single.metrics.f_p:.3f}, 2x F_p {concat.metrics.f_p:.3f}, "
              f"predicted {pred.f_p:.3f}, dF_p {d.d_f_p:+.3f} +- {d.sigma_f_p:.3f}")
    with open(args.out, "w") as fh:
        fh.write(rows_to_csv(rows))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()

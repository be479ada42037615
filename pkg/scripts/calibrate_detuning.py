"""Find the static-detuning spread that puts the single-gate F_p in a window.

Usage: python scripts/calibrate_detuning.py [--lo 0.88] [--hi 0.90] [--epsilon 0.025]
"""

import argparse

from iontomo.analysis import process_fidelity
from iontomo.experiments import CALIBRATION_GRID, calibrate_detuning
from iontomo.pulse_engine import NoiseModel, TrapParams, build_sequence, gate_channel, ideal_target
from iontomo.quantum_core import unitary_to_chi


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lo", type=float, default=0.88)
    ap.add_argument("--hi", type=float, default=0.90)
    ap.add_argument("--epsilon", type=float, default=0.025, help="addressing error ratio")
    args = ap.parse_args()

    trap = TrapParams()
    noise = NoiseModel(addressing_ratio=args.epsilon)
    print("sigma [rad/s]   F_p(A)   F_p(B)")
    for sigma in CALIBRATION_GRID:
        fps = []
        for variant in ("A", "B"):
            ch = gate_channel(build_sequence(variant), trap, NoiseModel(args.epsilon, float(sigma)))
            fps.append(process_fidelity(ch.chi, unitary_to_chi(ideal_target(variant))))
        print(f"{sigma:12.1f}   {fps[0]:.4f}   {fps[1]:.4f}")
    sigma, f_p = calibrate_detuning(trap, noise, "A", (args.lo, args.hi))
    print(f"calibrated sigma = {sigma:.1f} rad/s, F_p(A) = {f_p:.4f}")


if __name__ == "__main__":
    main()

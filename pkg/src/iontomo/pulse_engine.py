"""Cirac-Zoller CNOT pulse sequences on two ions and one vibrational mode.

Rotations follow

    R(theta, phi)  = exp[i theta/2 (e^{i phi} s+     + e^{-i phi} s-)]
    R+(theta, phi) = exp[i theta/2 (e^{i phi} s+ a^dag + e^{-i phi} s- a)]

with ``s+ = |D><S|`` and ``theta`` referenced to the n=0 -> 1 sideband Rabi
frequency. State vectors live on ``|ion2, ion1, n>`` with ``n = 0..n_max``.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .quantum_core import PAULI_1Q, kraus_to_chi, ProcessMatrix, hermitize

log = logging.getLogger(__name__)

TWO_PI = 2 * math.pi
SQRT2 = math.sqrt(2)

CARRIER = "carrier"
BLUE_SIDEBAND = "blue_sideband"
SHAPES = ("instantaneous", "square", "ramped")

MODE_RETURN_TOL = 1e-9
FOCK_LEAKAGE_TOL = 1e-6
UNITARITY_TOL = 1e-7


class NumericalError(RuntimeError):
    """Integrator or probability failure."""


# target unitaries of sequences A and B in the DD, DS, SD, SS basis
CNOT_A = np.array([[0, 1j, 0, 0], [-1j, 0, 0, 0], [0, 0, -1, 0], [0, 0, 0, -1]], dtype=complex)
CNOT_B = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1j], [0, 0, -1j, 0]], dtype=complex)


def _zrot(angle: float) -> np.ndarray:
    return expm(-1j * angle * PAULI_1Q["Z"])


# Z-rotation that completes sequence B
U_Z = np.kron(_zrot((1 - 1 / math.sqrt(8)) * math.pi), _zrot(math.pi / math.sqrt(8)))

TARGETS = {"A": CNOT_A, "B": CNOT_B, "identity": np.eye(4, dtype=complex)}


def ideal_target(variant: str, repetitions: int = 1) -> np.ndarray:
    u = TARGETS[variant]
    return np.linalg.matrix_power(u, repetitions)


@dataclass(frozen=True)
class Pulse:
    ion: int
    kind: str
    theta: float
    phi: float
    shape: str = "instantaneous"

    def __post_init__(self):
        if self.ion not in (1, 2):
            raise ValueError(f"ion must be 1 or 2, got {self.ion}")
        if self.kind not in (CARRIER, BLUE_SIDEBAND):
            raise ValueError(f"unknown pulse kind {self.kind!r}")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown pulse shape {self.shape!r}")
        if self.theta < 0:
            raise ValueError("pulse area must be non-negative")
        object.__setattr__(self, "phi", float(self.phi) % TWO_PI)

    def rabi(self, params: "TrapParams") -> float:
        return params.omega_bsb if self.kind == BLUE_SIDEBAND else params.omega_carrier

    def duration(self, params: "TrapParams") -> float:
        """Pulse length theta / Omega for a square envelope."""
        return self.theta / self.rabi(params)


@dataclass(frozen=True)
class PulseSequence:
    pulses: tuple[Pulse, ...]
    variant: str
    # per-ion phase offsets (control, target) owed to every later pulse
    frame_shifts: tuple[float, float] = (0.0, 0.0)

    def shifted(self, control: float, target: float) -> "PulseSequence":
        offsets = {2: control, 1: target}
        pulses = tuple(replace(p, phi=p.phi + offsets[p.ion]) for p in self.pulses)
        return replace(self, pulses=pulses)

    def with_shape(self, shape: str) -> "PulseSequence":
        return replace(self, pulses=tuple(replace(p, shape=shape) for p in self.pulses))

    def duration(self, params: "TrapParams") -> float:
        return sum(p.duration(params) for p in self.pulses)

    def __len__(self):
        return len(self.pulses)


@dataclass(frozen=True)
class TrapParams:
    omega_z: float = TWO_PI * 1.36e6
    omega_bsb: float = TWO_PI * 4.4e3
    eta: float = 0.05
    ramp_time: float = 5e-6
    n_max: int = 3
    # cancel the carrier light shift during sideband pulses (integrated path only)
    stark_compensation: bool = True

    def __post_init__(self):
        for name in ("omega_z", "omega_bsb", "eta", "ramp_time"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if int(self.n_max) < 1:
            raise ValueError("n_max must be >= 1")

    @property
    def omega_carrier(self) -> float:
        return self.omega_bsb / self.eta

    @property
    def n_levels(self) -> int:
        return self.n_max + 1

    @property
    def dim(self) -> int:
        return 4 * self.n_levels


@dataclass(frozen=True)
class NoiseModel:
    addressing_ratio: float = 0.025
    detuning_sigma: float = 0.0
    include_offresonant_carrier: bool = False
    correlate_across_gates: bool = True
    # Gauss-Hermite nodes for exact averaging over the static detuning
    quadrature_nodes: int = 32

    def __post_init__(self):
        if not 0 <= self.addressing_ratio <= 1:
            raise ValueError("addressing_ratio must lie in [0, 1]")
        if self.detuning_sigma < 0:
            raise ValueError("detuning_sigma must be non-negative")
        if self.quadrature_nodes < 1:
            raise ValueError("quadrature_nodes must be positive")

    @classmethod
    def ideal(cls) -> "NoiseModel":
        return cls(addressing_ratio=0.0, detuning_sigma=0.0)


def build_sequence(variant: str, shape: str = "instantaneous") -> PulseSequence:
    """The pulse list of sequence A or B in application order."""
    pi = math.pi
    c, sb = CARRIER, BLUE_SIDEBAND
    if variant == "A":
        spec = [
            (2, sb, pi, 0), (1, c, pi / 2, 0),
            (1, sb, pi, pi / 2), (1, sb, pi / SQRT2, 0), (1, sb, pi, pi / 2), (1, sb, pi / SQRT2, 0),
            (1, c, pi / 2, pi), (2, sb, pi, pi),
        ]
        shifts = (0.0, 0.0)
    elif variant == "B":
        spec = [
            (2, sb, pi, 0), (1, c, pi / 2, 0),
            (1, sb, pi / 2, pi), (1, sb, SQRT2 * pi, pi / 2), (1, sb, pi / 2, 0),
            (1, c, pi / 2, (1 / SQRT2 - 1) * pi), (2, sb, pi, pi),
        ]
        shifts = (-pi / SQRT2, pi / SQRT2)
    else:
        raise ValueError(f"unknown sequence variant {variant!r}")
    pulses = tuple(Pulse(ion, kind, theta, phi, shape) for ion, kind, theta, phi in spec)
    return PulseSequence(pulses, variant, shifts)


def concatenate(seq: PulseSequence, repetitions: int) -> tuple[list[PulseSequence], tuple[float, float]]:
    """Repeat ``seq`` carrying frame shifts forward.

    Returns the phase-shifted copies (in application order) and the total
    accumulated frame offset to be removed after the last gate.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    out, acc = [], (0.0, 0.0)
    for _ in range(repetitions):
        out.append(seq.shifted(*acc))
        acc = (acc[0] + seq.frame_shifts[0], acc[1] + seq.frame_shifts[1])
    return out, acc


def frame_correction(shifts: tuple[float, float]) -> np.ndarray:
    """Qubit Z rotations absorbing accumulated frame shifts (control, target)."""
    def rz(p):
        return np.diag([np.exp(-0.5j * p), np.exp(0.5j * p)])
    return np.kron(rz(shifts[0]), rz(shifts[1]))


# ---------------------------------------------------------------------------
# Operators on |ion2, ion1, n>
# ---------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _operators(n_levels: int) -> dict:
    sp = np.array([[0, 1], [0, 0]], dtype=complex)  # |D><S|
    i2 = np.eye(2, dtype=complex)
    im = np.eye(n_levels, dtype=complex)
    adag = np.diag(np.sqrt(np.arange(1, n_levels)), -1).astype(complex)
    z = PAULI_1Q["Z"]

    def full(ion2, ion1, mode):
        return np.kron(np.kron(ion2, ion1), mode)

    ops = {
        ("sp", 2): full(sp, i2, im), ("sp", 1): full(i2, sp, im),
        ("spad", 2): full(sp, i2, adag), ("spad", 1): full(i2, sp, adag),
        ("z", 2): full(z, i2, im), ("z", 1): full(i2, z, im),
    }
    return ops


def _coupling(n_levels: int, ion: int, kind: str, phi: float) -> np.ndarray:
    """``e^{i phi} O + h.c.`` with O = s+ (carrier) or s+ a^dag (sideband)."""
    key = "sp" if kind == CARRIER else "spad"
    g = np.exp(1j * phi) * _operators(n_levels)[(key, ion)]
    return g + g.conj().T


def _detuning_term(n_levels: int, detuning: float) -> np.ndarray:
    ops = _operators(n_levels)
    return 0.5 * detuning * (ops[("z", 1)] + ops[("z", 2)])


def _drive(pulse: Pulse, n_levels: int, epsilon: float, kind: str | None = None) -> np.ndarray:
    """Hermitian drive generator summed over addressed ion and crosstalk."""
    kind = kind or pulse.kind
    other = 3 - pulse.ion
    g = _coupling(n_levels, pulse.ion, kind, pulse.phi)
    if epsilon:
        g = g + epsilon * _coupling(n_levels, other, kind, pulse.phi)
    return g


def pulse_unitary(pulse: Pulse, params: TrapParams, epsilon: float = 0.0, detuning: float = 0.0) -> np.ndarray:
    """Matrix-exponential propagator of one pulse.

    The neighbouring ion sees the same generator scaled by ``epsilon``.
    A static ``detuning`` (rad/s) acts on both qubits for the pulse duration.
    """
    g = _drive(pulse, params.n_levels, epsilon)
    if detuning == 0.0:
        return expm(0.5j * pulse.theta * g)
    t = pulse.duration(params)
    h = -0.5 * pulse.rabi(params) * g + _detuning_term(params.n_levels, detuning)
    return expm(-1j * t * h)


def system_state(qubit_ket: np.ndarray, n_levels: int) -> np.ndarray:
    """``|psi> (x) |n=0>`` on the full space."""
    mode0 = np.zeros(n_levels, dtype=complex)
    mode0[0] = 1
    return np.kron(np.asarray(qubit_ket, dtype=complex), mode0)


def mode_populations(state: np.ndarray, n_levels: int) -> np.ndarray:
    psi = np.asarray(state).reshape(4, n_levels)
    return np.sum(np.abs(psi) ** 2, axis=0)


def simulate_sequence_ideal(
    seq: PulseSequence, state: np.ndarray, params: TrapParams | None = None, frame_correct: bool = True
) -> np.ndarray:
    """Apply the noise-free pulse sequence to a full-space ket.

    With ``frame_correct`` the sequence's frame shift is removed at the end
    (equivalent to shifting the phases of all later pulses).
    """
    params = params or TrapParams()
    state = np.asarray(state, dtype=complex)
    pops = mode_populations(state, params.n_levels)
    if 1 - pops[0] > MODE_RETURN_TOL:
        raise ValueError("input must have the vibrational mode in its ground state")
    for p in seq.pulses:
        state = pulse_unitary(p, params) @ state
    if frame_correct:
        corr = np.kron(frame_correction(seq.frame_shifts), np.eye(params.n_levels))
        state = corr @ state
    return state


def sequence_unitary(
    seq: PulseSequence, params: TrapParams, epsilon: float = 0.0, detuning: float = 0.0, integrate: bool = False
) -> np.ndarray:
    u = np.eye(params.dim, dtype=complex)
    for p in seq.pulses:
        if integrate:
            step = integrate_pulse(p, params, detuning, epsilon)
        else:
            step = pulse_unitary(p, params, epsilon, detuning)
        u = step @ u
    return u


def induced_qubit_unitary(u_full: np.ndarray, n_levels: int) -> np.ndarray:
    """Block of a full-space propagator mapping mode |0> to mode |0>."""
    idx = np.arange(4) * n_levels
    return u_full[np.ix_(idx, idx)]


def max_fock_population(seq: PulseSequence, params: TrapParams, epsilon: float = 0.0) -> float:
    """Largest population in level n_max at any pulse boundary over the 4 basis inputs."""
    worst = 0.0
    for q in range(4):
        psi = system_state(np.eye(4)[q], params.n_levels)
        for p in seq.pulses:
            psi = pulse_unitary(p, params, epsilon) @ psi
            worst = max(worst, mode_populations(psi, params.n_levels)[-1])
    return float(worst)


# ---------------------------------------------------------------------------
# Time-dependent integration
# ---------------------------------------------------------------------------


def pulse_envelope(pulse: Pulse, params: TrapParams) -> tuple[float, float, float]:
    """Return ``(peak_fraction, plateau, ramp)`` for a pulse.

    The resonant area peak * Omega * (plateau + ramp) equals theta. Ramped
    pulses too short for a plateau are run at reduced peak amplitude.
    """
    omega = pulse.rabi(params)
    t_sq = pulse.theta / omega
    if pulse.shape == "square":
        return 1.0, t_sq, 0.0
    tau = params.ramp_time
    if t_sq >= tau:
        return 1.0, t_sq - tau, tau
    return t_sq / tau, 0.0, tau


def _envelope_values(t: np.ndarray, peak: float, plateau: float, ramp: float) -> np.ndarray:
    if ramp == 0.0:
        return np.full_like(t, peak)
    rise = np.sin(0.5 * np.pi * np.clip(t / ramp, 0, 1)) ** 2
    fall = np.sin(0.5 * np.pi * np.clip((plateau + 2 * ramp - t) / ramp, 0, 1)) ** 2
    return peak * np.minimum(rise, fall)


def max_step(params: TrapParams) -> float:
    return 1.0 / (200 * params.omega_z / TWO_PI)


def integrate_pulse(
    pulse: Pulse, params: TrapParams, detuning: float = 0.0, epsilon: float = 0.0, chunk: int = 4096
) -> np.ndarray:
    """Fixed-step RK4 propagator of a shaped or square pulse.

    The Hamiltonian contains the resonant drive with envelope Omega(t), the
    off-resonant carrier companion (detuned by omega_z, Rabi Omega/eta) for
    sideband pulses, a static detuning on both qubits and, if enabled, a
    counter-term cancelling the companion's light shift.
    """
    if pulse.shape not in ("square", "ramped"):
        raise ValueError(f"integrate_pulse needs a square or ramped pulse, got {pulse.shape!r}")
    nl = params.n_levels
    dim = params.dim
    if pulse.theta == 0:
        return np.eye(dim, dtype=complex)

    peak, plateau, ramp = pulse_envelope(pulse, params)
    total = plateau + 2 * ramp
    n_steps = max(1, math.ceil(total / max_step(params)))
    h = total / n_steps
    omega = pulse.rabi(params)

    drive = -0.5 * omega * _drive(pulse, nl, epsilon)
    static = _detuning_term(nl, detuning)
    parts = [drive]
    if pulse.kind == BLUE_SIDEBAND:
        ops = _operators(nl)
        other = 3 - pulse.ion
        comp = np.exp(1j * pulse.phi) * (ops[("sp", pulse.ion)] + epsilon * ops[("sp", other)])
        comp = -0.5 * (omega / params.eta) * comp
        parts += [comp, comp.conj().T]
        if params.stark_compensation:
            # light shift of a drive detuned by omega_z: -(Omega_c^2 / 4 omega_z) Z per ion
            scale = (omega / params.eta) ** 2 / (4 * params.omega_z)
            stark = scale * (ops[("z", pulse.ion)] + epsilon ** 2 * ops[("z", other)])
            parts.append(stark)
    basis = -1j * np.array(parts)  # generators of dU/dt = -i H U
    static = -1j * static

    u = np.eye(dim, dtype=complex)
    for start in range(0, n_steps, chunk):
        stop = min(n_steps, start + chunk)
        # half-step grid covering [start*h, stop*h]
        t = h * (start + 0.5 * np.arange(2 * (stop - start) + 1))
        env = _envelope_values(t, peak, plateau, ramp)
        coeffs = [env]
        if pulse.kind == BLUE_SIDEBAND:
            phase = np.exp(-1j * params.omega_z * t)
            coeffs += [env * phase, env * phase.conj()]
            if params.stark_compensation:
                coeffs.append(env ** 2)
        a_all = np.tensordot(np.array(coeffs), basis, axes=([0], [0])) + static
        for k in range(stop - start):
            a0, am, a1 = a_all[2 * k], a_all[2 * k + 1], a_all[2 * k + 2]
            k1 = a0 @ u
            k2 = am @ (u + 0.5 * h * k1)
            k3 = am @ (u + 0.5 * h * k2)
            k4 = a1 @ (u + h * k3)
            u = u + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

    err = np.abs(u.conj().T @ u - np.eye(dim)).max()
    if err > UNITARITY_TOL:
        raise NumericalError(f"integrated propagator deviates from unitarity by {err:.2e}")
    return u


def sideband_leakage(u_full: np.ndarray, n_levels: int) -> float:
    """Population leaving {|D S 0>, |D D 1>} when starting from |D S 0>.

    Measures off-resonant carrier excitation of a pulse on ion 1.
    """
    psi0 = np.zeros(4 * n_levels, dtype=complex)
    psi0[1 * n_levels + 0] = 1  # |D S, 0>
    out = u_full @ psi0
    kept = abs(out[1 * n_levels + 0]) ** 2 + abs(out[0 * n_levels + 1]) ** 2
    return float(1 - kept)


# ---------------------------------------------------------------------------
# Noisy gates
# ---------------------------------------------------------------------------


def _gate_unitary(seqs, params, noise, detunings, integrate) -> np.ndarray:
    u = np.eye(params.dim, dtype=complex)
    for seq, delta in zip(seqs, detunings):
        u = sequence_unitary(seq, params, noise.addressing_ratio, delta, integrate) @ u
    return u


def _check_integrable(seq: PulseSequence, noise: NoiseModel) -> bool:
    if not noise.include_offresonant_carrier:
        return False
    if any(p.shape == "instantaneous" for p in seq.pulses):
        raise ValueError("off-resonant carrier modelling needs square or ramped pulses")
    return True


def run_gate(
    seq: PulseSequence,
    rho_in: np.ndarray,
    params: TrapParams,
    noise: NoiseModel,
    rng: np.random.Generator,
    shots: int,
    repetitions: int = 1,
    frame_correct: bool = True,
) -> np.ndarray:
    """Monte-Carlo average over per-shot static detunings of the gate output.

    Each shot draws one detuning (per gate unless ``correlate_across_gates``),
    evolves ``rho_in (x) |0><0|`` and traces out the mode. ``rho_in`` may be
    a stack of shape ``(k, 4, 4)``; all inputs then share the same draws.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    integrate = _check_integrable(seq, noise)
    seqs, acc = concatenate(seq, repetitions)
    corr = frame_correction(acc) if frame_correct else np.eye(4)
    nl = params.n_levels
    rho_in = np.asarray(rho_in, dtype=complex)
    out = np.zeros(rho_in.shape, dtype=complex)
    n_draws = 1 if noise.correlate_across_gates else repetitions
    for _ in range(shots):
        deltas = rng.normal(0.0, noise.detuning_sigma, n_draws) if noise.detuning_sigma > 0 else np.zeros(n_draws)
        if n_draws == 1:
            deltas = np.repeat(deltas, repetitions)
        u = _gate_unitary(seqs, params, noise, deltas, integrate)
        kraus = _kraus_from_unitary(u, nl, corr)
        out += sum(k @ rho_in @ k.conj().T for k in kraus)  # broadcasts over stacks
    return out / shots


def _kraus_from_unitary(u_full: np.ndarray, n_levels: int, corr: np.ndarray) -> list[np.ndarray]:
    cols = np.arange(4) * n_levels
    return [corr @ u_full[np.ix_(cols + n, cols)] for n in range(n_levels)]


def detuning_quadrature(sigma: float, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite nodes and weights for an average over Normal(0, sigma)."""
    if sigma == 0 or nodes == 1:
        return np.zeros(1), np.ones(1)
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    return sigma * x, w / w.sum()


@dataclass
class GateChannel:
    chi: ProcessMatrix
    residual_mode_population: float
    fock_top_population: float
    warnings: list[str] = field(default_factory=list)


def gate_channel(
    seq: PulseSequence,
    params: TrapParams,
    noise: NoiseModel,
    repetitions: int = 1,
    frame_correct: bool = True,
) -> GateChannel:
    """Exact detuning-averaged channel of ``repetitions`` applications of ``seq``.

    Averages over the static detuning with Gauss-Hermite quadrature; one draw
    spans all gates when ``noise.correlate_across_gates``, otherwise every
    gate gets an independent draw.
    """
    integrate = _check_integrable(seq, noise)
    seqs, acc = concatenate(seq, repetitions)
    corr = frame_correction(acc) if frame_correct else np.eye(4)
    nl = params.n_levels
    deltas, weights = detuning_quadrature(noise.detuning_sigma, noise.quadrature_nodes)

    cache = {}

    def unitary(k, delta):
        key = (k, float(delta))
        if key not in cache:
            cache[key] = sequence_unitary(seqs[k], params, noise.addressing_ratio, delta, integrate)
        return cache[key]

    if noise.correlate_across_gates or repetitions == 1:
        combos = [((d,) * repetitions, w) for d, w in zip(deltas, weights)]
    else:
        combos = [
            (tuple(deltas[list(ix)]), float(np.prod(weights[list(ix)])))
            for ix in itertools.product(range(len(deltas)), repeat=repetitions)
        ]

    chi = np.zeros((16, 16), dtype=complex)
    residual = 0.0
    for ds, w in combos:
        u = np.eye(params.dim, dtype=complex)
        for k, d in enumerate(ds):
            u = unitary(k, d) @ u
        kraus = _kraus_from_unitary(u, nl, corr)
        chi += w * kraus_to_chi(kraus)
        residual += w * sum(np.linalg.norm(k) ** 2 for k in kraus[1:]) / 4

    top = max(max_fock_population(s, params, noise.addressing_ratio) for s in seqs)
    notes = []
    if top > FOCK_LEAKAGE_TOL:
        msg = f"population {top:.2e} reached Fock level n_max={params.n_max}"
        notes.append(msg)
        log.info(msg)
    if residual > MODE_RETURN_TOL:
        log.info("residual mode excitation %.3e after gate", residual)
    return GateChannel(ProcessMatrix(hermitize(chi)), float(residual), float(top), notes)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from iontomo.pulse_engine import (
    BLUE_SIDEBAND,
    CARRIER,
    CNOT_A,
    CNOT_B,
    NoiseModel,
    NumericalError,
    Pulse,
    TrapParams,
    build_sequence,
    concatenate,
    detuning_quadrature,
    frame_correction,
    gate_channel,
    induced_qubit_unitary,
    integrate_pulse,
    max_fock_population,
    mode_populations,
    pulse_unitary,
    run_gate,
    sequence_unitary,
    sideband_leakage,
    simulate_sequence_ideal,
    system_state,
)
from iontomo.quantum_core import apply_chi, ket_to_dm, partial_trace_mode, unitary_to_chi
from iontomo.tomography import tomography_input_states

PI = math.pi
SQ2 = math.sqrt(2)
NL = 4  # default n_max = 3

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def idx(s2, s1, n, nl=NL):
    """Index of |ion2, ion1, n>, s = 0 for D and 1 for S."""
    return (2 * s2 + s1) * nl + n


def oracle_generator(ion, kind, phi, nl=NL):
    """e^{i phi} O + h.c. built element by element; O = |D><S| or |D><S| a^dag."""
    dim = 4 * nl
    o = np.zeros((dim, dim), dtype=complex)
    for other in (0, 1):
        for n in range(nl):
            s2, s1 = (1, other) if ion == 2 else (other, 1)
            d2, d1 = (0, other) if ion == 2 else (other, 0)
            if kind == CARRIER:
                o[idx(d2, d1, n, nl), idx(s2, s1, n, nl)] = 1
            elif n + 1 < nl:
                o[idx(d2, d1, n + 1, nl), idx(s2, s1, n, nl)] = math.sqrt(n + 1)
    g = np.exp(1j * phi) * o
    return g + g.conj().T


def oracle_pulse(ion, kind, theta, phi):
    return expm(0.5j * theta * oracle_generator(ion, kind, phi))


def align_phase(u, target):
    k = np.unravel_index(np.argmax(np.abs(target)), target.shape)
    return u * (target[k] / u[k]) / abs(target[k] / u[k])


def basis_ket(s2, s1, n=0, nl=NL):
    v = np.zeros(4 * nl, dtype=complex)
    v[idx(s2, s1, n, nl)] = 1
    return v


# sequences


def test_sequence_a_pulse_list():
    seq = build_sequence("A")
    assert len(seq) == 8
    expected = [
        (2, BLUE_SIDEBAND, PI, 0), (1, CARRIER, PI / 2, 0), (1, BLUE_SIDEBAND, PI, PI / 2),
        (1, BLUE_SIDEBAND, PI / SQ2, 0), (1, BLUE_SIDEBAND, PI, PI / 2), (1, BLUE_SIDEBAND, PI / SQ2, 0),
        (1, CARRIER, PI / 2, PI), (2, BLUE_SIDEBAND, PI, PI),
    ]
    for p, (ion, kind, theta, phi) in zip(seq.pulses, expected):
        assert (p.ion, p.kind) == (ion, kind)
        assert p.theta == pytest.approx(theta) and p.phi == pytest.approx(phi)
    assert seq.frame_shifts == (0.0, 0.0)


def test_sequence_b_pulse_list_and_shifts():
    seq = build_sequence("B")
    assert len(seq) == 7
    ramsey2 = seq.pulses[5]
    assert ramsey2.kind == CARRIER and ramsey2.ion == 1
    assert ramsey2.phi == pytest.approx((1 / SQ2 - 1) * PI % (2 * PI))
    assert seq.pulses[3].theta == pytest.approx(SQ2 * PI)
    assert seq.frame_shifts == pytest.approx((-PI / SQ2, PI / SQ2))


def test_unknown_variant():
    with pytest.raises(ValueError):
        build_sequence("C")


def test_pulse_validation_and_phase_wrap():
    assert Pulse(1, CARRIER, PI, -PI / 2).phi == pytest.approx(1.5 * PI)
    with pytest.raises(ValueError):
        Pulse(1, CARRIER, -0.1, 0)
    with pytest.raises(ValueError):
        Pulse(3, CARRIER, 0.1, 0)
    with pytest.raises(ValueError):
        Pulse(1, "red", 0.1, 0)


def test_carrier_rabi_from_lamb_dicke():
    p = TrapParams()
    assert p.omega_carrier == pytest.approx(p.omega_bsb / p.eta)
    assert Pulse(1, CARRIER, PI, 0).duration(p) == pytest.approx(PI / p.omega_carrier)


# single pulses


@pytest.mark.parametrize("ion,kind", [(1, CARRIER), (2, CARRIER), (1, BLUE_SIDEBAND), (2, BLUE_SIDEBAND)])
@pytest.mark.parametrize("theta,phi", [(PI, 0.0), (PI / SQ2, PI / 2), (0.37, 4.1)])
def test_pulse_unitary_matches_elementwise_oracle(ion, kind, theta, phi):
    got = pulse_unitary(Pulse(ion, kind, theta, phi), TrapParams())
    np.testing.assert_allclose(got, oracle_pulse(ion, kind, theta, phi), atol=1e-13)


def test_carrier_pi_pulse_flips_ion1():
    out = pulse_unitary(Pulse(1, CARRIER, PI, 0), TrapParams()) @ basis_ket(1, 1)
    # exp(i pi/2 sigma_x) = i sigma_x
    assert abs(out[idx(1, 0, 0)] - 1j) < 1e-14
    assert abs(abs(out[idx(1, 0, 0)]) ** 2 - 1) < 1e-14


def test_sideband_pi_pulse_swaps_into_mode():
    out = pulse_unitary(Pulse(2, BLUE_SIDEBAND, PI, 0), TrapParams()) @ basis_ket(1, 1)
    assert abs(abs(out[idx(0, 1, 1)]) ** 2 - 1) < 1e-14


@pytest.mark.parametrize("theta", [0.3, PI / 2, PI, 2.2])
def test_sideband_rotates_sqrt2_faster_in_n1(theta):
    out = pulse_unitary(Pulse(1, BLUE_SIDEBAND, theta, 0), TrapParams()) @ basis_ket(0, 1, 1)
    assert abs(abs(out[idx(0, 0, 2)]) ** 2 - math.sin(theta * SQ2 / 2) ** 2) < 1e-13


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(0, 0.2), st.floats(-5e3, 5e3))
def test_pulse_unitary_is_unitary(seed, eps, delta):
    rng = np.random.default_rng(seed)
    p = Pulse(int(rng.integers(1, 3)), (CARRIER, BLUE_SIDEBAND)[rng.integers(2)], rng.uniform(0, 2 * PI), rng.uniform(0, 2 * PI))
    u = pulse_unitary(p, TrapParams(), eps, delta)
    assert np.abs(u.conj().T @ u - np.eye(len(u))).max() < 1e-12


def test_crosstalk_drives_neighbour_with_same_phase():
    eps = 0.03
    p = Pulse(1, CARRIER, PI / 2, 0.7)
    g = oracle_generator(1, CARRIER, 0.7) + eps * oracle_generator(2, CARRIER, 0.7)
    np.testing.assert_allclose(pulse_unitary(p, TrapParams(), eps), expm(0.25j * PI * g), atol=1e-13)


def test_detuning_term_adds_z_phases():
    params = TrapParams()
    delta = 2000.0
    p = Pulse(1, CARRIER, 0.0, 0)
    np.testing.assert_allclose(pulse_unitary(p, params, 0, delta), np.eye(params.dim), atol=1e-15)
    p = Pulse(2, BLUE_SIDEBAND, PI, 0)
    t = p.duration(params)
    z_sum = np.diag([(1 if s2 == 0 else -1) + (1 if s1 == 0 else -1) for s2 in (0, 1) for s1 in (0, 1) for _ in range(NL)])
    h = -0.5 * params.omega_bsb * oracle_generator(2, BLUE_SIDEBAND, 0) + 0.5 * delta * z_sum
    np.testing.assert_allclose(pulse_unitary(p, params, 0, delta), expm(-1j * t * h), atol=1e-12)


# ideal sequences


def oracle_sequence_unitary(seq):
    u = np.eye(4 * NL, dtype=complex)
    for p in seq.pulses:
        u = oracle_pulse(p.ion, p.kind, p.theta, p.phi) @ u
    return u


def test_sequence_a_induces_reference_cnot():
    u = induced_qubit_unitary(oracle_sequence_unitary(build_sequence("A")), NL)
    assert np.abs(align_phase(u, CNOT_A) - CNOT_A).max() < 1e-9
    u_pkg = induced_qubit_unitary(sequence_unitary(build_sequence("A"), TrapParams()), NL)
    assert np.abs(align_phase(u_pkg, CNOT_A) - CNOT_A).max() < 1e-9


def test_sequence_b_induces_cnot_after_frame_correction():
    seq = build_sequence("B")
    u = frame_correction(seq.frame_shifts) @ induced_qubit_unitary(oracle_sequence_unitary(seq), NL)
    assert np.abs(align_phase(u, CNOT_B) - CNOT_B).max() < 1e-9


@pytest.mark.parametrize("variant", ["A", "B"])
def test_mode_returns_to_ground(variant):
    params = TrapParams()
    for q in range(4):
        out = simulate_sequence_ideal(build_sequence(variant), system_state(np.eye(4)[q], NL), params)
        assert 1 - mode_populations(out, NL)[0] < 1e-9


def test_sequence_a_flips_target_when_control_d():
    out = simulate_sequence_ideal(build_sequence("A"), basis_ket(0, 1))
    assert abs(abs(out[idx(0, 0, 0)]) ** 2 - 1) < 1e-12


def test_sequence_b_flips_target_when_control_s():
    out = simulate_sequence_ideal(build_sequence("B"), basis_ket(1, 0))
    assert abs(abs(out[idx(1, 1, 0)]) ** 2 - 1) < 1e-12


def test_excited_mode_input_rejected():
    with pytest.raises(ValueError):
        simulate_sequence_ideal(build_sequence("A"), basis_ket(0, 1, 1))


@pytest.mark.parametrize("variant", ["A", "B"])
def test_fock_cutoff_not_reached_ideally(variant):
    assert max_fock_population(build_sequence(variant), TrapParams()) < 1e-6


# frame shifts and concatenation


def test_concatenate_accumulates_frame_shifts():
    seq = build_sequence("B")
    seqs, acc = concatenate(seq, 2)
    assert acc == pytest.approx((-SQ2 * PI, SQ2 * PI))
    for p0, p1 in zip(seqs[0].pulses, seqs[1].pulses):
        shift = -PI / SQ2 if p0.ion == 2 else PI / SQ2
        assert (p1.phi - p0.phi - shift) % (2 * PI) == pytest.approx(0, abs=1e-12) or \
            (p1.phi - p0.phi - shift) % (2 * PI) == pytest.approx(2 * PI, abs=1e-12)
    with pytest.raises(ValueError):
        concatenate(seq, 0)


@pytest.mark.parametrize("variant", ["A", "B"])
def test_noise_free_double_gate_is_identity(variant):
    ch = gate_channel(build_sequence(variant), TrapParams(), NoiseModel.ideal(), repetitions=2)
    assert ch.chi.chi[0, 0].real > 1 - 1e-12


# integrated pulses


def test_zero_area_pulse_is_identity():
    params = TrapParams()
    u = integrate_pulse(Pulse(1, BLUE_SIDEBAND, 0.0, 0, "ramped"), params)
    np.testing.assert_array_equal(u, np.eye(params.dim))


def test_instantaneous_pulse_cannot_be_integrated():
    with pytest.raises(ValueError):
        integrate_pulse(Pulse(1, CARRIER, PI, 0), TrapParams())


def test_integrated_square_carrier_matches_exponential():
    # a square carrier pulse has a constant Hamiltonian: RK4 must reproduce expm
    params = TrapParams()
    p = Pulse(2, CARRIER, PI / 2, 0.4, "square")
    for delta in (0.0, 3000.0):
        np.testing.assert_allclose(integrate_pulse(p, params, delta, 0.02), pulse_unitary(p, params, 0.02, delta), atol=1e-9)


def test_integrated_ramped_carrier_has_requested_area():
    params = TrapParams()
    p = Pulse(1, CARRIER, PI, 0.0, "ramped")
    ideal = pulse_unitary(Pulse(1, CARRIER, PI, 0.0), params)
    np.testing.assert_allclose(integrate_pulse(p, params), ideal, atol=1e-9)


def test_integrated_propagator_unitary():
    params = TrapParams()
    u = integrate_pulse(Pulse(1, BLUE_SIDEBAND, PI / SQ2, 0.3, "ramped"), params, 1500.0, 0.025)
    assert np.abs(u.conj().T @ u - np.eye(params.dim)).max() < 1e-7


def test_integrator_refuses_too_coarse_steps(monkeypatch):
    import iontomo.pulse_engine as pe

    monkeypatch.setattr(pe, "max_step", lambda params: 2e-6)
    with pytest.raises(NumericalError):
        integrate_pulse(Pulse(1, BLUE_SIDEBAND, PI, 0, "square"), TrapParams())


@pytest.fixture(scope="module")
def leakage():
    fast = TrapParams(omega_bsb=2 * PI * 5.3e3)
    out = {}
    for shape in ("ramped", "square"):
        u = integrate_pulse(Pulse(1, BLUE_SIDEBAND, PI, 0, shape), fast)
        out[shape] = sideband_leakage(u, fast.n_levels)
    return out


def test_ramped_sideband_leakage_small(leakage):
    assert leakage["ramped"] < 1e-4


def test_square_sideband_leakage_much_larger(leakage):
    assert leakage["square"] >= 10 * leakage["ramped"]


# noisy gates


def test_noise_free_run_gate_is_ideal_on_all_inputs():
    rhos = np.array([ket_to_dm(p) for p in tomography_input_states()])
    out = run_gate(build_sequence("A"), rhos, TrapParams(), NoiseModel.ideal(), np.random.default_rng(0), shots=1)
    np.testing.assert_allclose(out, CNOT_A @ rhos @ CNOT_A.conj().T, atol=1e-12)
    out = run_gate(build_sequence("B"), rhos, TrapParams(), NoiseModel.ideal(), np.random.default_rng(0), shots=1)
    np.testing.assert_allclose(out, CNOT_B @ rhos @ CNOT_B.conj().T, atol=1e-12)


def test_noise_free_run_gate_matches_simulate_sequence_ideal():
    params = TrapParams()
    psi = np.array([1, 1j, -1, 0.5]) / np.linalg.norm([1, 1j, -1, 0.5])
    ket = simulate_sequence_ideal(build_sequence("A"), system_state(psi, NL), params)
    rho = run_gate(build_sequence("A"), ket_to_dm(psi), params, NoiseModel.ideal(), np.random.default_rng(1), 3)
    np.testing.assert_allclose(rho, partial_trace_mode(ket, NL), atol=1e-12)


def test_dephasing_reduces_purity():
    plus = np.array([1, 1]) / SQ2
    s = np.array([0, 1])
    rho = ket_to_dm(np.kron(plus, s))
    noise = NoiseModel(addressing_ratio=0.0, detuning_sigma=3000.0)
    out = run_gate(build_sequence("A"), rho, TrapParams(), noise, np.random.default_rng(2), shots=40)
    assert np.trace(out @ out).real < 1 - 1e-3
    assert abs(np.trace(out) - 1) < 1e-12


def test_run_gate_deterministic_given_seed():
    rho = np.eye(4) / 4 + 0.1 * np.diag([1, -1, 1, -1])
    noise = NoiseModel(detuning_sigma=2000.0)
    a = run_gate(build_sequence("B"), rho, TrapParams(), noise, np.random.default_rng(9), shots=5)
    b = run_gate(build_sequence("B"), rho, TrapParams(), noise, np.random.default_rng(9), shots=5)
    np.testing.assert_array_equal(a, b)


def test_run_gate_requires_shots():
    with pytest.raises(ValueError):
        run_gate(build_sequence("A"), np.eye(4) / 4, TrapParams(), NoiseModel(), np.random.default_rng(0), 0)


def test_quadrature_moments():
    sigma = 1700.0
    x, w = detuning_quadrature(sigma, 32)
    assert w.sum() == pytest.approx(1, abs=1e-14)
    assert np.sum(w * x) == pytest.approx(0, abs=1e-9)
    assert np.sum(w * x ** 2) == pytest.approx(sigma ** 2, rel=1e-12)
    assert np.sum(w * x ** 4) == pytest.approx(3 * sigma ** 4, rel=1e-12)
    assert detuning_quadrature(0.0, 32)[0].tolist() == [0.0]


def test_quadrature_channel_matches_monte_carlo():
    params = TrapParams()
    noise = NoiseModel(addressing_ratio=0.02, detuning_sigma=2500.0)
    seq = build_sequence("A")
    psi = np.kron([1, 1j], [1, 1]) / 2
    rho = ket_to_dm(psi)
    ch = gate_channel(seq, params, noise)
    exact = apply_chi(ch.chi, rho)
    shots = 600
    rng = np.random.default_rng(11)
    # per-shot outputs give a Monte-Carlo error estimate
    samples = np.array([run_gate(seq, rho, params, noise, rng, 1) for _ in range(shots)])
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(shots)
    assert np.all(np.abs(mean - exact) <= 4 * se + 1e-12)


def test_gate_channel_noise_free_equals_target():
    for variant, target in (("A", CNOT_A), ("B", CNOT_B)):
        ch = gate_channel(build_sequence(variant), TrapParams(), NoiseModel.ideal())
        np.testing.assert_allclose(ch.chi.chi, unitary_to_chi(target).chi, atol=1e-12)
        assert ch.residual_mode_population < 1e-9
        assert ch.warnings == []


def test_crosstalk_channel_flags_fock_leakage():
    ch = gate_channel(build_sequence("A"), TrapParams(), NoiseModel(addressing_ratio=0.025))
    ch.chi.validate()
    assert ch.fock_top_population > 1e-6
    assert any("Fock level" in w for w in ch.warnings)


def test_correlation_matters_for_double_gate():
    params = TrapParams()
    base = NoiseModel(addressing_ratio=0.0, detuning_sigma=2000.0, quadrature_nodes=12)
    corr = gate_channel(build_sequence("A"), params, base, repetitions=2)
    uncorr = gate_channel(build_sequence("A"), params, NoiseModel(0.0, 2000.0, correlate_across_gates=False, quadrature_nodes=12), repetitions=2)
    assert abs(corr.chi.chi[0, 0] - uncorr.chi.chi[0, 0]) > 1e-3
    for ch in (corr, uncorr):
        assert ch.chi.tp_residual() < 1e-9

"""Simulation and process tomography of trapped-ion Cirac-Zoller CNOT gates."""

__version__ = "0.1.0"

from .quantum_core import (  # noqa: F401
    ProcessMatrix,
    apply_chi,
    compose_chi,
    pauli_product_basis,
    unitary_to_chi,
)
from .pulse_engine import (  # noqa: F401
    CNOT_A,
    CNOT_B,
    NoiseModel,
    TrapParams,
    build_sequence,
    gate_channel,
    run_gate,
)
from .tomography import MLEOptions, mle_reconstruct, simulate_dataset  # noqa: F401
from .analysis import metric_report, process_fidelity  # noqa: F401
from .experiments import ExperimentConfig, GateReport  # noqa: F401

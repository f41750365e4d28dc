"""Entropic dynamics laboratory.

Max-ent transition kernels, (rho, Phi) Hamilton flow checked against a
split-step Schrodinger reference, pointer-device inference and
Peres-Mermin contextuality checks.
"""

from .contextuality import (
    ObservableTable,
    context_products,
    context_selection_pipeline,
    hybrid_check,
    load_table_text,
    mermin_square,
    mermin_star,
    parity_certificate,
    valuation_search,
)
from .evolution import (
    DensityField,
    Grid1D,
    HamiltonianSpec,
    PhaseField,
    WaveField,
    ensemble_hamiltonian,
    evolve_compare,
    from_wavefunction,
    gaussian_packet,
    hamilton_step,
    schrodinger_step,
    to_wavefunction,
)
from .inference import (
    DiscreteDistribution,
    HermitianOperator,
    Likelihood,
    PointerDevice,
    PointerInference,
    StateVector,
    apply_device,
    born_probabilities,
    detection_update,
    function_joint,
    infer_observable,
    overlap_distance,
    weak_value,
)
from .kernel import (
    Configuration,
    Drift,
    KernelParams,
    MaxEntKernel,
    evolve_ensemble,
    transition_logpdf,
    transition_sample,
    verify_constraints,
)
from .pauli import PauliString, pauli_commutes, pauli_mul

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

"""hybridsim: simulator and pulse compiler for hybrid qubit/oscillator registers."""

from .hilbert import (
    DEFAULT_GUARD,
    DensityMatrix,
    HilbertError,
    RegisterLayout,
    StateVector,
    SubsystemSpec,
    basis_state,
    compress_to_interior,
    embed,
    interior_mask,
    join_states,
    new_register,
    qubit,
    qumode,
    reduced_density,
)
from .operators import (
    HamiltonianExpr,
    HamiltonianTerm,
    LocalOp,
    OperatorError,
    ExprSyntaxError,
    PrimitiveSet,
    build,
    commutator,
    fock_annihilate,
    fock_create,
    fock_momentum,
    fock_position,
    format_expr,
    generator_id,
    parse_expr,
    pauli,
    primitive_set,
    term,
)
from .evolution import (
    EvolutionError,
    EvolutionReport,
    Pulse,
    PulseSequence,
    UnknownGeneratorError,
    cv_qft,
    expm_apply,
    expm_unitary,
    leakage,
    run_sequence,
    sequence_unitary,
    trotter,
)
from .synthesis import (
    ClosureReport,
    DerivationError,
    DerivationRule,
    SynthPlan,
    SynthesisError,
    SynthesisRegistry,
    close_algebra,
    closure_to_json,
    derive_rule,
    group_commutator,
    measure_plan_error,
    oscillator_drive,
    plan_to_json,
    reset_spin,
    standard_registry,
    synthesize,
)
from .spectral import (
    PointerSpec,
    QuadratureBasis,
    RobustnessReport,
    SpectralError,
    SpectrumEstimate,
    couple_pointer,
    estimate_spectrum,
    measure_position,
    measure_position_binned,
    prepare_gaussian_pointer,
    quadrature_basis,
    robustness_midmeasure,
)

__version__ = "0.1.0"

"""collapse-lab: stochastic simulations of measurement decoherence and collapse.

Desk-scale numerical machinery for a collision-driven picture of quantum
measurement: density-matrix algebra, a toy collision model with random
sector phases, pointer decoherence at the collision rate, the
entanglement cascade in frontier regions, Brownian reduction of channel
probabilities with the hitting law reproducing the initial weights, and
the locality-constrained joint reduction of an entangled pair.
"""

from .core import (
    DEFAULT_TOLERANCES,
    DensityMatrix,
    DimensionError,
    SubsystemSplit,
    Tolerances,
    ValidationError,
    coherence_norm,
    damp_coherence,
    partial_trace,
    tensor_product,
)
from .collision import (
    DegeneracyError,
    ModelError,
    SectorEnsemble,
    ToyTMatrix,
    WavePacketParams,
    collision_delta,
    cross_section,
    perturbative_sector_update,
    random_sector_ensemble,
    random_toy_tmatrix,
    rediagonalize_oracle,
    sum_rule_deviation,
    transition_probability,
)
from .decoherence import (
    CollisionStream,
    PointerChannelAmplitudes,
    StepSizeError,
    decay_rate_fit,
    reduced_pointer_matrix,
    step_sector_ensemble,
)
from .cascade import (
    CascadeState,
    FrontierModel,
    aggregate_frontier,
    cascade_closed_form,
    cascade_integrate,
    cascade_trajectory,
    sample_beta_fluctuations,
)
from .reduction import (
    AbsorptionRecord,
    BornRuleResult,
    ChannelSimplex,
    CovarianceModel,
    FokkerPlanckResult,
    GenericCovariance,
    NonAbsorptionError,
    WrightFisherCovariance,
    born_rule_ensemble,
    brownian_step,
    covariance_model,
    fokker_planck_2ch,
    run_to_absorption,
)
from .epr import (
    BlockCovariance,
    JointChannelGrid,
    JointReductionResult,
    SpinPairState,
    covariance_block_check,
    joint_weights,
    local_kick_step,
    predicted_kick_covariance,
    rotate_coefficients,
    run_joint_reduction,
    run_sequential_reduction,
)
from .experiments import load_config, load_preset, preset_names, run_experiment
from .report import RunReport, emit_report

__version__ = "0.1.0"

"""Active-RIS uplink channel estimation: parametric MLE, adaptive pilot
beams, and Monte Carlo link-level experiments."""

from .beamcontrol import (
    AmplificationProfile,
    Codebook,
    CodebookExhausted,
    amplification_profile,
    build_codebook,
    closest_beam,
    compose_config,
    export_codebook,
    initial_configs,
    phase_align,
    wide_beams,
)
from .channel import (
    BsRisChannel,
    LosChannel,
    LosChannelParams,
    NoiseModel,
    friis_gain,
    make_bs_ris_channel,
    make_channel,
    observe_pilots,
    sample_user,
)
from .estimator import (
    EstimateResult,
    EstimationFailure,
    NoiseCovariance,
    SearchGrid,
    UnobservableDirection,
    estimate_beta,
    estimate_channel,
    estimate_omega,
    estimate_psi,
    noise_covariance,
    objective,
)
from .geometry import (
    ArrayGeometry,
    DirectionParams,
    element_position,
    element_positions,
    field_boundaries,
    steering,
    steering_far,
    steering_near,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    ExperimentInterrupted,
    ResultTable,
    emit_results,
    model_mismatch_report,
    parse_results,
    run_experiment,
)
from .metrics import TrialRecord, capacity_bound, nmse, nmse_cascaded, spectral_efficiency
from .protocol import (
    RisConfiguration,
    RisMode,
    Scenario,
    configure_for_data,
    run_adaptive_estimation,
    run_passive_baseline,
)

__version__ = "0.1.0"

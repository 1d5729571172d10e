"""Ensemble Kalman assimilation on downsampled snapshot matrices, with
low-cost SVD super-resolution back to the original grid."""

from .snapshots import (
    FieldMeta,
    SnapshotMatrix,
    SensorSet,
    ReducedSnapshotMatrix,
    assemble_snapshot_matrix,
    disassemble_snapshot_matrix,
    uniform_sensor_set,
    extract,
    compression_rate,
)
from .snp_io import read_snapshot_file, write_snapshot_file
from .lcsvd import (
    TruncationPolicy,
    SVDFactors,
    truncated_svd,
    mode_count,
    reorthonormalize,
    fix_signs,
    lcsvd_reconstruct,
)
from .enkf import (
    Ensemble,
    ObservationModel,
    EnKFConfig,
    AssimilationResult,
    init_ensemble,
    forecast,
    background_covariance,
    kalman_gain_anomaly,
    perturb_observations,
    analysis_update,
    assimilate_window,
)
from .synth import (
    NoiseSpec,
    TruthSpec,
    TwinExperiment,
    add_noise,
    generate_truth,
    make_twin_experiment,
)
from .metrics import (
    MetricsReport,
    rrmse,
    mae,
    speedup,
    ram_compression,
    tracking_series,
)
from .experiment import ExperimentConfig, load_config, run_experiment, run_sweep

__version__ = "0.1.0"

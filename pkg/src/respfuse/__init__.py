"""respfuse: contactless respiratory-pattern processing at desk scale.

Synthesizes protocol-conformant breathing signals, extracts a robust 1-D
respiratory signal from noisy multi-channel observations, derives redundant
rate/amplitude features (peaks and wavelet ridges), fuses and corrects
them, augments labeled datasets, and classifies nine breathing patterns
with a pairwise-vote linear SVM.
"""

from .augment import build_dataset, measure_median_rr, mix_signals, redistribute_rr, substitute_kussmaul
from .classify import (
    EvalReport,
    OneVsOneSvmClassifier,
    SvmModel,
    cross_validate,
    evaluate_features,
    predict,
    train_ovo,
)
from .extract import (
    RobustSignalExtractor,
    Trajectory2D,
    build_observation_matrix,
    extract_signal,
    motion_gate,
    project_trajectory,
    select_channels,
    windowed_pca_fuse,
)
from .features import (
    CwtSpectrogram,
    PeakSet,
    cwt_spectrogram,
    detect_peaks,
    peak_features,
    ridge_features,
    sgolay_smooth,
)
from .pipeline import featurize, featurize_segment, load_config, run_pipeline
from .prep import estimate_lags, grid_search_resample, normalize, resample_by_factor, solve_offsets
from .records import Record, read_dataset, read_record, write_record
from .refine import artifact_correct, fuse_features, moving_variance, segment_features
from .svm import train_binary_svm
from .synth import (
    DEFAULT_PROTOCOL,
    ChannelModel,
    PatternSpec,
    generate_pattern,
    generate_protocol,
    generate_protocol_truth,
    load_protocol,
    synthesize_observations,
)
from .types import (
    FeatureSeries,
    FeatureVector,
    LabeledSegment,
    ObservationMatrix,
    PatternLabel,
    RecordError,
    RespiratorySignal,
    validate_record,
)

__version__ = "0.1.0"

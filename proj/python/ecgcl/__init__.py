"""ECG continual learning: multi-resolution 1D conv encoder, segmentation and
classification decoders, and per-task weight ownership."""

from ._core import (
    RETRAIN_LR,
    CapacityError,
    ConfigError,
    EncoderConfig,
    IoError,
    LookupError,
    ParamStore,
    ParseError,
    ShapeError,
    bandpass,
    default_release_schedule,
    encoder_shapes,
    load_checkpoint,
    load_csv,
    lr_at,
    macro_auc,
    parameter_count,
    parse_config,
    qrs_match,
    roc_auc,
    save_csv,
    synth_ecg,
    train_sequence,
)

__version__ = "0.1.0"

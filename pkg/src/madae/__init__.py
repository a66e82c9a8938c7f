"""Memory-augmented adversarial autoencoder for multivariate time-series anomaly detection."""

from madae.autodiff import AdamState, Tape, Tensor, adam_step
from madae.data import (
    AnomalySegment,
    NormalizationStats,
    RawSeries,
    SynthSpec,
    WindowedDataset,
    apply_normalize,
    fit_normalize,
    load_csv,
    parse_synth_spec,
    save_csv,
    synth,
    synth_pair,
    window,
)
from madae.evaluation import (
    EvalReport,
    ScoreSeries,
    best_f1,
    point_adjust,
    score_series,
)
from madae.model import ModelBundle
from madae.objective import LossWeights, anomaly_score
from madae.training import (
    TrainConfig,
    load_checkpoint,
    load_train_config,
    sample_batch,
    save_checkpoint,
    save_train_config,
    train,
)

__all__ = [
    "AdamState", "Tape", "Tensor", "adam_step",
    "AnomalySegment", "NormalizationStats", "RawSeries", "SynthSpec",
    "WindowedDataset", "apply_normalize", "fit_normalize", "load_csv",
    "parse_synth_spec", "save_csv", "synth", "synth_pair", "window",
    "EvalReport", "ScoreSeries", "best_f1", "point_adjust", "score_series",
    "ModelBundle", "LossWeights", "anomaly_score",
    "TrainConfig", "load_checkpoint", "load_train_config", "sample_batch",
    "save_checkpoint", "save_train_config", "train",
]
__version__ = "0.1.0"

"""Desk-scale emotional and speaker voice conversion on mel-cepstral features.

The public surface mirrors the processing chain: analysis and resynthesis
(`features`), the conversion networks and their training objectives (`nets`,
`losses`), corpus ingestion and the adversarial loop (`training`), the serial
emotion-then-speaker pipeline (`pipeline`), and MCD evaluation (`evaluation`).
"""

__version__ = "0.1.0"

from .errors import (DatasetError, FormatError, FormatVersionError,
                     InputError, InsufficientDataError, MassError,
                     NumericalError, ParameterError, StageError,
                     TrainingDivergedError)
from .features import (AcousticFeatures, AnalysisConfig, F0Statistics,
                       Waveform, analyze, compute_f0_statistics, convert_f0,
                       envelope_to_mcc, extract_envelope, extract_f0,
                       mcc_to_envelope, synthesize)
from .featio import (load_features, read_wav, save_features, write_wav)
from .nets import (AttributeLabel, ConversionModel, NetworkConfig,
                   build_model, classifier_forward, discriminator_forward,
                   generator_forward, load_model, save_model)
from .losses import (LossBundle, LossWeights, loss_adv_d, loss_adv_g,
                     loss_cls_c, loss_cls_g, loss_cyc, loss_id, total_losses)
from .training import (Batch, DatasetIndex, TrainConfig, Trainer,
                       ingest_dataset, sample_minibatch, train_model)
from .pipeline import (PipelineConfig, PipelineResult, TtsSource,
                       convert_utterance, mass_synthesize)
from .evaluation import (EvalPair, EvalReport, dtw_align, evaluate_direction,
                         export_spectral_summaries, mcd, mcd_sequences,
                         mcd_utterance)

__all__ = [
    "AcousticFeatures", "AnalysisConfig", "AttributeLabel", "Batch",
    "ConversionModel", "DatasetError", "DatasetIndex", "EvalPair",
    "EvalReport", "F0Statistics", "FormatError", "FormatVersionError",
    "InputError", "InsufficientDataError", "LossBundle", "LossWeights",
    "MassError", "NetworkConfig", "NumericalError", "ParameterError",
    "PipelineConfig", "PipelineResult", "StageError", "TrainConfig",
    "Trainer", "TrainingDivergedError", "TtsSource", "Waveform", "analyze",
    "build_model", "classifier_forward", "compute_f0_statistics",
    "convert_f0", "convert_utterance", "discriminator_forward", "dtw_align",
    "envelope_to_mcc", "evaluate_direction", "export_spectral_summaries",
    "extract_envelope", "extract_f0", "generator_forward", "ingest_dataset",
    "load_features", "load_model", "loss_adv_d", "loss_adv_g", "loss_cls_c",
    "loss_cls_g", "loss_cyc", "loss_id", "mass_synthesize", "mcc_to_envelope",
    "mcd", "mcd_sequences", "mcd_utterance", "read_wav", "sample_minibatch",
    "save_features", "save_model", "synthesize", "total_losses",
    "train_model", "write_wav",
]

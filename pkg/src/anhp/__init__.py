"""Attention-based continuous-time event models (flat and program-derived)."""
from .andtt import AndttModel, compile_program
from .base import BoundCertificate, Conditional, EventModel, ImpossibleEventError
from .data import Dataset, generate_synthetic, load_dataset, save_dataset
from .evaluation import MetricReport, bootstrap_ci, evaluate
from .events import EventSequence, SequenceError
from .flat import AnhpModel, ConfigError, FlatRule
from .likelihood import TrainingConfig, TrainingDiverged, eval_log_likelihood, mc_log_likelihood, train
from .thinning import predict_time, predict_type, sample_next_event, sample_sequence
from .timeenc import TimeEncodingConfig, embed_time, embed_times, estimate_scales

__version__ = "0.1.0"

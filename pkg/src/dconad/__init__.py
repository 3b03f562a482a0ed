"""Differencing-based contrastive anomaly detection for multivariate time series."""

from .config import RunConfig
from .data import SynthSpec, TimeSeriesDataset, WindowBatch, generate_synthetic, load_csv_dataset, make_windows
from .evaluation import EvalReport, point_adjust, prf1, threshold_labels
from .model import DetectorParams, EncoderConfig, encode
from .runner import evaluate, gradcheck, run_pipeline, score, sweep, train
from .tensor import Tape, Tensor, backward, stop_gradient

__version__ = "0.1.0"

__all__ = [
    "DetectorParams", "EncoderConfig", "EvalReport", "RunConfig", "SynthSpec", "Tape", "Tensor",
    "TimeSeriesDataset", "WindowBatch", "backward", "encode", "evaluate", "generate_synthetic",
    "gradcheck", "load_csv_dataset", "make_windows", "point_adjust", "prf1", "run_pipeline",
    "score", "stop_gradient", "sweep", "threshold_labels", "train",
]

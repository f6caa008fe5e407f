"""Reflective-event detection in simulated OTDR traces.

A from-scratch multi-task 1-D CNN detects a reflective event in a
35-sample window and regresses its position and reflectance.  The package
also provides the trace simulator, dataset tooling, a GLRT baseline, the
closed-form detection bound and the evaluation sweeps.
"""

__version__ = "0.1.0"

from .baselines import GLRTDetector, optimum_bound_pd
from .dataset import Dataset, WindowScaler, build_dataset, build_eval_variants, extract_sequences
from .exceptions import OTDRError
from .model import ModelConfig, ReflectiveEventCNN, train
from .simulation import SimConfig, build_pulse_template, simulate_batch, simulate_trace

__all__ = [
    "Dataset", "GLRTDetector", "ModelConfig", "OTDRError", "ReflectiveEventCNN", "SimConfig",
    "WindowScaler", "__version__", "build_dataset", "build_eval_variants", "build_pulse_template",
    "extract_sequences", "optimum_bound_pd", "simulate_batch", "simulate_trace", "train",
]

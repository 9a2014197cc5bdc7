"""Oxygen sensing from multi-frequency phase data with a two-site quenching model and a small neural network."""

from .calibration import CalibrationTable, FitResult, QuenchCurve, build_calibration, fit_two_site
from .dataset import Dataset, MismatchSpec, generate_mismatch_test, generate_synthetic, read_dataset, split, write_dataset
from .errors import ConstructionError, DomainError, FitError, ParseError, TrainingAborted
from .evaluation import SweepGrid, ae_per_observation, concentration_profile, mae, run_sweep
from .model import TwoSiteParams, angular_from_hz, hz_from_angular, phase_ratio_r, sv_ratio
from .network import AdamState, NetworkModel, NetworkSpec, TrainConfig, adam_step, backward, cost_mse, forward, train
from .spline import CubicSpline, ParamCurves, build_spline, sample_params

__version__ = "0.1.0"

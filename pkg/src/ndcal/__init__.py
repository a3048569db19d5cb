"""Nested dichotomies with internal (per-node) and external probability calibration."""

from .calibration import (apply_scaler, external_calibrate, fit_isotonic, fit_matrix_scaling,
                          fit_platt, fit_vector_scaling)
from .data import Dataset, load, parse_csv, parse_libsvm, stratified_kfold, stratified_split
from .dichotomy import NestedDichotomy, TreeStructure, sample_structure, train
from .learners import LearnerConfig, fit_binary
from .metrics import accuracy, depth_reliability, ece, evaluate, nll, reliability_bins

__version__ = "0.1.0"

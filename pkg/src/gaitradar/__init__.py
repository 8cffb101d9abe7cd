"""Gait asymmetry detection from continuous-wave radar micro-Doppler signatures."""

__version__ = "0.1.0"

from .features import FEATURE_NAMES, FeatureVector, SsimParams, feature_vector, mssim
from .gaitparams import GaitStats, InsufficientStepsError, NoPeriodicityError, gait_stats
from .model import FeatureTable, LogisticModel, evaluate_loso, fit_logistic, roc, select_model
from .pipeline import PipelineConfig, analyze_measurement, analyze_signal
from .sim import (CohortSpec, Direction, Label, RadarConfig, WalkerConfig, default_cohort,
                  make_dataset, synthesize_return)
from .stepext import StepPair, StepWindow, ncc_profile, step_pair
from .tfa import Spectrogram, StftParams, denoise, stft_spectrogram

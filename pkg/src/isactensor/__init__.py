"""Tensor-based channel and target parameter estimation for massive MIMO ISAC."""

from .baselines import als_cpd, als_parameters, matched_filter_range_velocity, music_1d, music_angles
from .beam_squint import Alg2Options, SegmentTensorSet, build_segment_tensors, run_algorithm2
from .errors import (Degenerate, EstimationError, IllConditioned, MatchFailure, NumericalFailure,
                     UniquenessError)
from .experiments import ResultRow, SweepConfig, run_sweep, snr_sweep
from .extraction import Alg1Options, ParamEstimates, channel_nmse, reconstruct_channel, run_algorithm1
from .signal_model import ArrayConfig, ScatterKind, Scatterer, ScatterSet, ScenarioBounds, generate_scenario
from .tensor import FactorTriple, add_noise, cpd_reconstruct, fold, khatri_rao, unfold
from .vandermonde import (TrainingPattern, build_echo_tensor, cpd_vandermonde, random_training,
                          resolvable_table)

__version__ = "0.1.0"

__all__ = [
    "Alg1Options", "Alg2Options", "ArrayConfig", "Degenerate", "EstimationError", "FactorTriple",
    "IllConditioned", "MatchFailure", "NumericalFailure", "ParamEstimates", "ResultRow", "ScatterKind",
    "ScatterSet", "Scatterer", "ScenarioBounds", "SegmentTensorSet", "SweepConfig", "TrainingPattern",
    "UniquenessError", "add_noise", "als_cpd", "als_parameters", "build_echo_tensor", "build_segment_tensors",
    "channel_nmse", "cpd_reconstruct", "cpd_vandermonde", "fold", "generate_scenario", "khatri_rao",
    "matched_filter_range_velocity", "music_1d", "music_angles", "random_training", "reconstruct_channel",
    "resolvable_table", "run_algorithm1", "run_algorithm2", "run_sweep", "snr_sweep", "unfold",
]

"""Time-varying harmonic model analysis of voiced speech."""
from .estimator import (
    ConvergenceError,
    FitOptions,
    InfeasibleStartError,
    RankDeficientError,
    UnvoicedError,
    build_design_matrix,
    fit,
    init_f0_autocorrelation,
    solve_amplitudes,
    solve_phase,
)
from .measures import MeasureSet, compute_measures, hnr_band, hnr_overall
from .model import (
    AmplitudeParams,
    FittedModel,
    ModelConfig,
    PhaseParams,
    WindowedFrame,
    synthesize,
)
from .pipeline import AnalysisRecord, PipelineConfig, analyze_file, analyze_signal, read_wav
from .synthbench import SynthSpec, run_sweep, synth_signal
from .vocaltract import adjust_harmonic_powers, burg_ar

__version__ = "0.1.0"

__all__ = [
    "AmplitudeParams", "AnalysisRecord", "ConvergenceError", "FitOptions", "FittedModel",
    "InfeasibleStartError", "MeasureSet", "ModelConfig", "PhaseParams", "PipelineConfig",
    "RankDeficientError", "SynthSpec", "UnvoicedError", "WindowedFrame",
    "adjust_harmonic_powers", "analyze_file", "analyze_signal", "build_design_matrix",
    "burg_ar", "compute_measures", "fit", "hnr_band", "hnr_overall",
    "init_f0_autocorrelation", "read_wav", "run_sweep", "solve_amplitudes", "solve_phase",
    "synth_signal", "synthesize",
]

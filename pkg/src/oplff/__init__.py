"""Baseband-equivalent simulator of OPL feedforward laser coherence cloning."""

from .analysis import (
    Spectrum,
    SuppressionReport,
    analytic_suppression,
    suppression_at,
    tone_power_dbc,
    welch_psd,
)
from .calibrate import Bench, CalibrationResult, calibrate, calibrate_delay, calibrate_gain_phase
from .engine import (
    ChainConfig,
    DriftProfile,
    EngineAbort,
    RunResult,
    drift_run,
    retune_offset,
    run_scenario,
    sweep_tone,
)
from .noise import NoiseConfig, NoisePsdSpec, PhaseTrace, ToneSpec, inject_tone, synth_phase_noise

__version__ = "0.1.0"

__all__ = [
    "Bench",
    "CalibrationResult",
    "ChainConfig",
    "DriftProfile",
    "EngineAbort",
    "NoiseConfig",
    "NoisePsdSpec",
    "PhaseTrace",
    "RunResult",
    "Spectrum",
    "SuppressionReport",
    "ToneSpec",
    "analytic_suppression",
    "calibrate",
    "calibrate_delay",
    "calibrate_gain_phase",
    "drift_run",
    "inject_tone",
    "retune_offset",
    "run_scenario",
    "suppression_at",
    "sweep_tone",
    "synth_phase_noise",
    "tone_power_dbc",
    "welch_psd",
]

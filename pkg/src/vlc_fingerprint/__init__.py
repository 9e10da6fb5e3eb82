"""Optic fingerprints for LED identification in visible light links."""
from .circuit import (
    NOMINAL_PARAMS,
    ChannelGeometry,
    CircuitParams,
    DomainError,
    FrequencyGrid,
    LinkScale,
    channel_gain,
    lambertian_order,
    led_impedance,
    sweep_response,
    vlc_transfer,
)
from .extract import FitOptions, FitResult, OpticFingerprint, fingerprint, fit_sweep, residual_mse
from .synth import PopulationSpec, S21Sweep, add_noise, sample_geometries, sample_population, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "NOMINAL_PARAMS", "ChannelGeometry", "CircuitParams", "DomainError", "FrequencyGrid", "LinkScale",
    "channel_gain", "lambertian_order", "led_impedance", "sweep_response", "vlc_transfer",
    "FitOptions", "FitResult", "OpticFingerprint", "fingerprint", "fit_sweep", "residual_mse",
    "PopulationSpec", "S21Sweep", "add_noise", "sample_geometries", "sample_population", "simulate_dataset",
]

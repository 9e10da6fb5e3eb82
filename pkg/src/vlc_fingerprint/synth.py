"""Synthetic LED populations, measurement positions and S21 sweeps.

Every random draw is keyed off an integer master seed. Sweeps derive a
private sub-stream from ``(seed, device, position, rep)`` so a dataset is
identical no matter the order in which its cells are generated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .circuit import (
    NOMINAL_PARAMS,
    ChannelGeometry,
    CircuitParams,
    DomainError,
    FrequencyGrid,
    LinkScale,
    channel_gain,
    sweep_response,
)

DEFAULT_SIGNAL_POWER_DBM = -5.0


class UnmeasurablePosition(DomainError):
    pass


def _rng(seed, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True)
class PopulationSpec:
    """How to draw a batch of nominally identical LEDs.

    ``tolerance`` is either one fraction shared by all four elements or a
    4-sequence ordered ``(r_c, c_j, r_q, c_q)``.
    """

    n_devices: int = 4
    nominal: CircuitParams = NOMINAL_PARAMS
    tolerance: float | tuple = 0.10
    intra_device_jitter: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_devices < 2:
            raise ValueError("n_devices must be >= 2")
        tol = self.tolerances
        if np.any(tol < 0) or np.any(tol >= 1):
            raise ValueError(f"tolerance must lie in [0, 1), got {self.tolerance!r}")
        j = self.intra_device_jitter
        if not 0 <= j < 1:
            raise ValueError(f"intra_device_jitter must lie in [0, 1), got {j!r}")
        if tol.max() > 0 and j >= tol.max():
            raise ValueError("intra_device_jitter must be smaller than the manufacturing tolerance")

    @property
    def tolerances(self) -> np.ndarray:
        tol = np.broadcast_to(np.asarray(self.tolerance, dtype=float), (4,))
        return np.array(tol)


@dataclass(frozen=True)
class DeviceGroundTruth:
    device_id: str
    true_params: CircuitParams


@dataclass(frozen=True, eq=False)
class S21Sweep:
    """One complex frequency response plus what is known about how it was taken."""

    grid: FrequencyGrid
    values: np.ndarray
    device_id: Optional[str] = None
    geometry: Optional[ChannelGeometry] = None
    noise_power_dbm: Optional[float] = None
    signal_power_dbm: float = DEFAULT_SIGNAL_POWER_DBM

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (len(self.grid),):
            raise ValueError(f"sweep has {vals.size} values for {len(self.grid)} grid points")
        if not np.all(np.isfinite(vals)):
            raise ValueError("sweep values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def freqs(self) -> np.ndarray:
        return self.grid.points

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


@dataclass(frozen=True)
class SweepDataset:
    sweeps: list
    labels: list
    positions: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.sweeps) != len(self.labels):
            raise ValueError("labels must align with sweeps")
        if self.positions and len(self.positions) != len(self.sweeps):
            raise ValueError("positions must align with sweeps")
        ids, counts = np.unique(np.asarray(self.labels, dtype=str), return_counts=True)
        if np.any(counts < 2):
            raise ValueError(f"every label needs >= 2 sweeps; {ids[counts < 2].tolist()} do not")

    def __len__(self):
        return len(self.sweeps)


def device_ids(n: int) -> list[str]:
    width = max(2, len(str(n)))
    return [f"led{i + 1:0{width}d}" for i in range(n)]


def sample_population(spec: PopulationSpec) -> list[DeviceGroundTruth]:
    """Draw each element as ``nominal * (1 + u)`` with ``u ~ U[-tol, tol]``."""
    rng = _rng(spec.seed, 0)
    tol = spec.tolerances
    u = rng.uniform(-1.0, 1.0, size=(spec.n_devices, 4)) * tol
    return [
        DeviceGroundTruth(dev_id, spec.nominal.scaled(1 + u[i]))
        for i, dev_id in enumerate(device_ids(spec.n_devices))
    ]


def sample_geometries(
    n_positions: int,
    d_range: tuple[float, float] = (0.1, 0.6),
    angle_max: float = math.radians(20),
    *,
    phi_half: float = math.pi / 3,
    a_r: float = 1e-4,
    g_psi: float = 1.0,
    seed: int = 0,
) -> list[ChannelGeometry]:
    """Uniformly scatter receiver positions in distance and angle."""
    lo, hi = d_range
    if n_positions < 1:
        raise ValueError("n_positions must be >= 1")
    if not (0 < lo <= hi):
        raise ValueError(f"d_range must satisfy 0 < lo <= hi, got {d_range!r}")
    if not 0 <= angle_max < math.pi / 2:
        raise ValueError("angle_max must lie in [0, pi/2)")
    rng = _rng(seed, 1)
    d = rng.uniform(lo, hi, n_positions)
    phi = rng.uniform(0.0, angle_max, n_positions)
    psi = rng.uniform(0.0, angle_max, n_positions)
    return [
        ChannelGeometry(float(d[i]), float(phi[i]), float(psi[i]), phi_half, a_r, g_psi)
        for i in range(n_positions)
    ]


def zeta_for(geom: ChannelGeometry, electronics_gain: float = 1.0) -> LinkScale:
    """Link scale at ``geom``; ``electronics_gain`` stands for every non-channel gain."""
    if not (math.isfinite(electronics_gain) and electronics_gain > 0):
        raise ValueError("electronics_gain must be positive")
    h_c = channel_gain(geom)
    if h_c <= 0:
        raise UnmeasurablePosition("unmeasurable position: zero channel gain")
    return LinkScale(electronics_gain * h_c)


def simulate_dataset(
    devices: Sequence[DeviceGroundTruth],
    geometries: Sequence[ChannelGeometry],
    reps: int,
    grid: FrequencyGrid,
    jitter: float,
    seed: int,
    electronics_gain: float = 1.0,
) -> SweepDataset:
    """One sweep per (device, position, rep), ordered device-major.

    Each measurement perturbs the device's elements by ``1 + u`` with
    ``u ~ U[-jitter, jitter]`` to model drift between repeated sweeps.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    scales = [zeta_for(g, electronics_gain) for g in geometries]
    sweeps, labels, positions = [], [], []
    for i, dev in enumerate(devices):
        for j, geom in enumerate(geometries):
            for r in range(reps):
                u = _rng(seed, 2, i, j, r).uniform(-jitter, jitter, 4) if jitter > 0 else np.zeros(4)
                params = dev.true_params.scaled(1 + u)
                sweeps.append(S21Sweep(grid, sweep_response(params, scales[j], grid), dev.device_id, geom))
                labels.append(dev.device_id)
                positions.append(j)
    return SweepDataset(sweeps, labels, positions)


def noise_variance(noise_power_dbm: float, signal_power_dbm: float = DEFAULT_SIGNAL_POWER_DBM) -> float:
    """Complex per-point variance ``E|n|^2`` of S21 noise for a given receiver noise power."""
    return 10.0 ** ((noise_power_dbm - signal_power_dbm) / 10.0)


def add_noise(
    sweep: S21Sweep,
    noise_power_dbm: float,
    signal_power_dbm: float = DEFAULT_SIGNAL_POWER_DBM,
    seed: int | np.random.SeedSequence = 0,
) -> S21Sweep:
    """Superimpose circular white Gaussian noise on every S21 sample.

    A receiver noise power ``N`` against an injected tone of power ``S``
    perturbs S21 by a complex Gaussian of variance ``10**((N - S)/10)``.
    ``-inf`` switches noise off.
    """
    if noise_power_dbm == -math.inf:
        return sweep
    var = noise_variance(noise_power_dbm, signal_power_dbm)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    rng = np.random.default_rng(ss)
    n = len(sweep.grid)
    noise = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    noisy = sweep.values + math.sqrt(var / 2) * noise
    return replace(sweep, values=noisy, noise_power_dbm=float(noise_power_dbm),
                   signal_power_dbm=float(signal_power_dbm))

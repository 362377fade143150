"""Additive pouring-sound synthesizer and the seeded dataset sampler."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .core import (
    DEFAULT_SAMPLE_RATE,
    AudioBuffer,
    ContainerShape,
    ContainerSpec,
    DomainError,
    FillProfile,
    PhysicsConstants,
    RadialParams,
)
from .data_loader import MANIFEST_COLUMNS, PourDataLoader
from .physics import ML_PER_M3, fill_profile, radial_frequency, wavelength_profile

logger = logging.getLogger(__name__)

PEAK_LEVEL = 0.9
TAPER_FRACTION = 0.05  # of Nyquist


class LoudnessEnvelope(str, Enum):
    CONSTANT = "constant"
    ATTACK_DECAY = "attack_decay"


@dataclass(frozen=True)
class SynthConfig:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    n_harmonics: int = 3
    harmonic_rolloff: float = 0.5
    include_radial: bool = False
    radial: Optional[RadialParams] = None
    radial_gain_db: float = -12.0
    noise_snr_db: Optional[float] = None
    loudness_envelope: LoudnessEnvelope = LoudnessEnvelope.CONSTANT
    seed: int = 0
    truth_rate: float = 100.0  # ground-truth samples per second

    def __post_init__(self):
        if not (isinstance(self.sample_rate, (int, np.integer)) and self.sample_rate > 0):
            raise DomainError(f"sample rate must be a positive integer, got {self.sample_rate}")
        if self.n_harmonics < 1:
            raise DomainError("need at least the fundamental (n_harmonics >= 1)")
        if not 0 < self.harmonic_rolloff <= 1:
            raise DomainError("harmonic rolloff must lie in (0, 1]")
        if self.include_radial and self.radial is None:
            raise DomainError("include_radial needs RadialParams")
        if self.noise_snr_db is not None and not np.isfinite(self.noise_snr_db):
            object.__setattr__(self, "noise_snr_db", None)
        if not self.truth_rate > 0:
            raise DomainError("truth rate must be positive")
        object.__setattr__(self, "loudness_envelope", LoudnessEnvelope(self.loudness_envelope))


@dataclass(frozen=True)
class GroundTruth:
    fill: FillProfile
    table: pd.DataFrame  # t, l_m, lambda_m, f_hz
    measured_snr_db: Optional[float] = None

    @property
    def wavelengths(self) -> pd.Series:
        return pd.Series(self.table["lambda_m"].to_numpy(), index=pd.Index(self.table["t"].to_numpy(), name="t"),
                         name="lambda_m")


def _taper(freqs, nyquist):
    """Gain falling from 1 to 0 over the band just below Nyquist."""
    return np.clip((nyquist - freqs) / (TAPER_FRACTION * nyquist), 0.0, 1.0)


def _phase(freqs, sample_rate):
    phase = 2.0 * np.pi * np.cumsum(freqs) / sample_rate
    return phase - phase[0]


def _envelope(kind, n):
    env = np.ones(n)
    if kind is LoudnessEnvelope.ATTACK_DECAY:
        n_ramp = max(1, int(0.05 * n))
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n_ramp) / n_ramp)
        env[:n_ramp] = ramp
        env[-n_ramp:] = np.minimum(env[-n_ramp:], ramp[::-1])
    return env


def synthesize_pour(container: ContainerSpec, flow_Q: float, config: SynthConfig = SynthConfig(),
                    constants: PhysicsConstants = PhysicsConstants(),
                    duration: Optional[float] = None) -> Tuple[AudioBuffer, GroundTruth]:
    """Render a pour into `container` at volume flow `flow_Q` (m^3/s).

    The tone follows the axial fundamental and its odd harmonics with
    phase-continuous frequency. A zero flow renders a steady tone for `duration`
    seconds at the empty-container pitch.
    """
    sr = config.sample_rate
    nyquist = sr / 2.0
    if flow_Q:
        fill = fill_profile(container, flow_Q, n_samples=max(2, int(round(container.volume / flow_Q * config.truth_rate)) + 1))
    else:
        if duration is None or not duration > 0:
            raise DomainError("a zero-flow render needs a positive duration")
        n_truth = max(2, int(round(duration * config.truth_rate)) + 1)
        fill = FillProfile(float(duration), np.linspace(0.0, duration, n_truth), np.full(n_truth, container.height))

    n = int(round(fill.duration * sr))
    if n < 1:
        raise DomainError("pour duration is empty")

    lam = wavelength_profile(container, fill, constants).to_numpy()
    f_truth = constants.speed_of_sound / lam
    if f_truth.max() >= (1.0 - TAPER_FRACTION) * nyquist:
        logger.info(f"fundamental reaches {f_truth.max():.0f} Hz and fades out near Nyquist {nyquist:.0f} Hz")

    t = np.arange(n) / sr
    f = np.interp(t, fill.times, f_truth)
    phase = _phase(f, sr)
    tonal = np.zeros(n)
    for k in range(1, config.n_harmonics + 1):
        order = 2 * k - 1
        gain = _taper(order * f, nyquist)
        if not gain.any():
            logger.info(f"harmonic {order}f lies above Nyquist for the whole pour, dropped")
            continue
        if gain.min() < 1.0:
            logger.info(f"harmonic {order}f tapered near Nyquist")
        tonal += config.harmonic_rolloff ** (k - 1) * gain * np.sin(order * phase)

    if config.include_radial:
        f_radial = radial_frequency(np.interp(t, fill.times, fill.lengths), container.height, config.radial)
        gain = 10.0 ** (config.radial_gain_db / 20.0) * _taper(f_radial, nyquist)
        tonal += gain * np.sin(_phase(f_radial, sr))

    tonal *= _envelope(config.loudness_envelope, n)
    mix = tonal
    measured_snr = None
    if config.noise_snr_db is not None:
        rng = np.random.default_rng(config.seed)
        noise = rng.standard_normal(n)
        tonal_power = np.mean(tonal ** 2)
        noise *= np.sqrt(tonal_power / 10.0 ** (config.noise_snr_db / 10.0) / np.mean(noise ** 2))
        mix = tonal + noise
        measured_snr = float(10.0 * np.log10(tonal_power / np.mean(noise ** 2)))

    peak = np.max(np.abs(mix))
    if peak > 0:
        mix = mix * (PEAK_LEVEL / peak)

    table = pd.DataFrame({"t": fill.times, "l_m": fill.lengths, "lambda_m": lam, "f_hz": f_truth})
    return AudioBuffer(sr, mix), GroundTruth(fill, table, measured_snr)


@dataclass(frozen=True)
class SampleRanges:
    height: Tuple[float, float] = (0.05, 0.25)
    radius: Tuple[float, float] = (0.01, 0.05)
    duration: Tuple[float, float] = (6.0, 12.0)

    def __post_init__(self):
        for name in ("height", "radius", "duration"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise DomainError(f"{name} range must satisfy 0 < low <= high, got ({lo}, {hi})")


def sample_container(rng: np.random.Generator, ranges: SampleRanges = SampleRanges(),
                     shape: ContainerShape = ContainerShape.CYLINDER) -> Tuple[ContainerSpec, float]:
    """Draw a container and the constant flow (m^3/s) that fills it in a sampled time."""
    shape = ContainerShape(shape)
    H = rng.uniform(*ranges.height)
    R = rng.uniform(*ranges.radius)
    T = rng.uniform(*ranges.duration)
    if shape is ContainerShape.FRUSTUM:
        spec = ContainerSpec(shape, H, R, R * rng.uniform(1.6, 2.4))
    elif shape is ContainerShape.BOTTLENECK:
        spec = ContainerSpec(shape, H, R, R, neck_length=rng.uniform(0.02, 0.05),
                             neck_radius=max(0.005, R * rng.uniform(0.25, 0.5)))
    else:
        spec = ContainerSpec.cylinder(H, R)
    return spec, spec.volume / T


def sample_dataset(n: int, ranges: SampleRanges = SampleRanges(), config: SynthConfig = SynthConfig(),
                   seed: int = 0, out_dir: Path = Path("dataset"),
                   constants: PhysicsConstants = PhysicsConstants(),
                   shapes: Sequence[ContainerShape] = (ContainerShape.CYLINDER,),
                   loader: Optional[PourDataLoader] = None) -> pd.DataFrame:
    """Write n synthetic pours with ground truth and a manifest; returns the manifest."""
    if n < 1:
        raise DomainError(f"dataset size must be at least 1, got {n}")
    loader = loader or PourDataLoader()
    out_dir = Path(out_dir)
    loader.ensure_dir(out_dir)

    rows = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.default_rng(child)
        container, flow = sample_container(rng, ranges, shapes[i % len(shapes)])
        draw_seed = int(child.generate_state(1, dtype=np.uint64)[0])
        audio, truth = synthesize_pour(container, flow, replace(config, seed=draw_seed), constants)

        stem = f"sample_{i:05d}"
        loader.save_audio(audio, out_dir / f"{stem}.wav")
        loader.save_truth(truth.table, out_dir / f"{stem}_truth.csv")
        rows.append({
            "sample_id": stem,
            "audio": f"{stem}.wav",
            "truth": f"{stem}_truth.csv",
            "shape": container.shape.value,
            "height_m": container.height,
            "radius_base_m": container.radius_base,
            "radius_top_m": container.radius_top,
            "flow_ml_s": flow * ML_PER_M3,
            "duration_s": truth.fill.duration,
            "snr_db": math.inf if config.noise_snr_db is None else config.noise_snr_db,
            "seed": draw_seed,
        })
        logger.info(f"{stem}: {container.shape.value} H={container.height:.3f} R={container.radius_base:.3f} "
                    f"Q={flow * ML_PER_M3:.1f} ml/s")

    manifest = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    loader.save_table(manifest, out_dir / "manifest.csv")
    return manifest

"""Shared domain types, physical constants and unit conventions.

All lengths are meters, times seconds, frequencies Hz. Values are frozen
dataclasses so they can be shared freely between threads.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

DEFAULT_SAMPLE_RATE = 16000


class PourError(Exception):
    """Base class for every error raised by this package."""


class DomainError(PourError, ValueError):
    """An argument or value violates a precondition."""


class NonPhysicalError(PourError):
    """An inversion produced dimensions that cannot exist."""


class InsufficientDataError(PourError):
    """Too few voiced frames or samples to fit anything."""


class NoPourDetectedError(InsufficientDataError):
    """The wavelength does not decrease over time."""


class PourInputError(PourError):
    """A file could not be read, parsed or written."""


@dataclass(frozen=True)
class PhysicsConstants:
    speed_of_sound: float = 343.0
    beta: float = 0.62

    def __post_init__(self):
        if not self.speed_of_sound > 0:
            raise DomainError(f"speed of sound must be positive, got {self.speed_of_sound}")
        # beta == 0 is the uncorrected closed-pipe law
        if not self.beta >= 0:
            raise DomainError(f"end-correction factor must be non-negative, got {self.beta}")


def wavelength_of_frequency(f: ArrayLike, constants: PhysicsConstants = PhysicsConstants()) -> ArrayLike:
    """lambda = c / f."""
    f_arr = np.asarray(f, dtype=float)
    if np.any(~(f_arr > 0)):
        raise DomainError("frequency must be positive")
    out = constants.speed_of_sound / f_arr
    return float(out) if out.ndim == 0 else out


def frequency_of_wavelength(wavelength: ArrayLike, constants: PhysicsConstants = PhysicsConstants()) -> ArrayLike:
    """f = c / lambda."""
    lam = np.asarray(wavelength, dtype=float)
    if np.any(~(lam > 0)):
        raise DomainError("wavelength must be positive")
    out = constants.speed_of_sound / lam
    return float(out) if out.ndim == 0 else out


class ContainerShape(str, Enum):
    CYLINDER = "cylinder"
    FRUSTUM = "frustum"
    BOTTLENECK = "bottleneck"


class ShapeLabel(str, Enum):
    CYLINDRICAL = "cylindrical"
    SEMICONICAL = "semiconical"
    BOTTLENECK = "bottleneck"

    @classmethod
    def for_shape(cls, shape: ContainerShape) -> "ShapeLabel":
        return {
            ContainerShape.CYLINDER: cls.CYLINDRICAL,
            ContainerShape.FRUSTUM: cls.SEMICONICAL,
            ContainerShape.BOTTLENECK: cls.BOTTLENECK,
        }[ContainerShape(shape)]


@dataclass(frozen=True)
class ContainerSpec:
    """Parametric container geometry.

    For a bottleneck, ``height`` and ``radius_base`` describe the cylindrical body
    that gets filled; the neck (``neck_length``, ``neck_radius``) sits on top of it.
    """

    shape: ContainerShape
    height: float
    radius_base: float
    radius_top: Optional[float] = None
    neck_length: Optional[float] = None
    neck_radius: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "shape", ContainerShape(self.shape))
        if self.radius_top is None:
            object.__setattr__(self, "radius_top", self.radius_base)
        if not self.height > 0:
            raise DomainError(f"container height must be positive, got {self.height}")
        if not (self.radius_base > 0 and self.radius_top > 0):
            raise DomainError("container radii must be positive")
        if self.shape is ContainerShape.CYLINDER and self.radius_top != self.radius_base:
            raise DomainError("a cylinder needs radius_top == radius_base")
        if self.shape is ContainerShape.BOTTLENECK:
            if self.neck_length is None or self.neck_radius is None:
                raise DomainError("a bottleneck needs neck_length and neck_radius")
            if not (self.neck_length > 0 and self.neck_radius > 0):
                raise DomainError("neck dimensions must be positive")
            if self.neck_radius >= self.radius_base:
                raise DomainError("neck radius must be smaller than the body radius")
            if self.radius_top != self.radius_base:
                raise DomainError("a bottleneck body is cylindrical: radius_top == radius_base")

    @classmethod
    def cylinder(cls, height: float, radius: float) -> "ContainerSpec":
        return cls(ContainerShape.CYLINDER, height, radius, radius)

    def radius_at(self, h: ArrayLike) -> ArrayLike:
        """Inner radius at height h above the base."""
        h = np.clip(np.asarray(h, dtype=float), 0.0, self.height)
        r = self.radius_base + (self.radius_top - self.radius_base) * h / self.height
        return float(r) if r.ndim == 0 else r

    def filled_volume(self, h: ArrayLike) -> ArrayLike:
        """Liquid volume (m^3) when filled to height h."""
        h = np.clip(np.asarray(h, dtype=float), 0.0, self.height)
        r0 = self.radius_base
        r = self.radius_at(h)
        v = math.pi * h * (r0 * r0 + r0 * r + r * r) / 3.0
        return float(v) if np.ndim(v) == 0 else v

    @property
    def volume(self) -> float:
        return self.filled_volume(self.height)

    @classmethod
    def from_dict(cls, data: dict) -> "ContainerSpec":
        neck = data.get("neck") or {}
        try:
            return cls(
                shape=ContainerShape(data["shape"]),
                height=float(data["height_m"]),
                radius_base=float(data["radius_base_m"]),
                radius_top=float(data["radius_top_m"]) if data.get("radius_top_m") is not None else None,
                neck_length=float(neck["length_m"]) if "length_m" in neck else None,
                neck_radius=float(neck["radius_m"]) if "radius_m" in neck else None,
            )
        except KeyError as e:
            raise DomainError(f"container spec is missing key {e}") from e
        except (TypeError, ValueError) as e:
            if isinstance(e, DomainError):
                raise
            raise DomainError(f"invalid container spec: {e}") from e

    def to_dict(self) -> dict:
        data = {
            "shape": self.shape.value,
            "height_m": self.height,
            "radius_base_m": self.radius_base,
            "radius_top_m": self.radius_top,
        }
        if self.shape is ContainerShape.BOTTLENECK:
            data["neck"] = {"length_m": self.neck_length, "radius_m": self.neck_radius}
        return data


@dataclass(frozen=True)
class FillProfile:
    """Air-column length l(t) sampled over the pour."""

    duration: float
    times: np.ndarray
    lengths: np.ndarray
    clamped: int = 0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        l = np.asarray(self.lengths, dtype=float)
        if t.shape != l.shape or t.ndim != 1:
            raise DomainError("times and lengths must be 1-D arrays of equal length")
        if np.any(np.diff(t) < 0):
            raise DomainError("fill profile samples must be sorted by time")
        if np.any(l < 0) or not np.all(np.isfinite(l)):
            raise DomainError("air-column lengths must be finite and non-negative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "lengths", l)

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.lengths) <= 1e-12))

    def at(self, t: ArrayLike) -> ArrayLike:
        out = np.interp(t, self.times, self.lengths)
        return float(out) if np.ndim(out) == 0 else out

    def to_series(self) -> pd.Series:
        return pd.Series(self.lengths, index=pd.Index(self.times, name="t"), name="l_m")


@dataclass(frozen=True)
class AudioBuffer:
    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        if not (isinstance(self.sample_rate, (int, np.integer)) and self.sample_rate > 0):
            raise DomainError(f"sample rate must be a positive integer, got {self.sample_rate}")
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1:
            raise DomainError("audio must be mono")
        if not np.all(np.isfinite(x)):
            raise DomainError("audio contains non-finite samples")
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "samples", x)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def truncate(self, t: float) -> "AudioBuffer":
        """Keep the first t seconds."""
        n = int(round(t * self.sample_rate))
        return replace(self, samples=self.samples[: max(n, 0)])

    def scaled(self, gain: float) -> "AudioBuffer":
        return replace(self, samples=self.samples * gain)

    def rms(self) -> float:
        if len(self.samples) == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples ** 2)))


class TrackSource(str, Enum):
    ARGMAX = "argmax"
    YIN = "yin"
    FITTED = "fitted"


@dataclass(frozen=True)
class PitchTrack:
    """Per-frame pitch; unvoiced frames carry NaN frequency and wavelength."""

    times: np.ndarray
    frequencies: np.ndarray
    wavelengths: np.ndarray
    confidence: np.ndarray
    source: TrackSource
    rms: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float) for a in (self.times, self.frequencies, self.wavelengths, self.confidence)]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise DomainError("pitch track columns must be 1-D arrays of equal length")
        t, f, lam, conf = arrays
        if np.any(np.diff(t) < 0):
            raise DomainError("pitch track frames must be time-sorted")
        if np.any(np.isnan(f) != np.isnan(lam)):
            raise DomainError("frequency and wavelength must be present together")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "wavelengths", lam)
        object.__setattr__(self, "confidence", np.clip(conf, 0.0, 1.0))
        object.__setattr__(self, "source", TrackSource(self.source))
        if self.rms is not None:
            rms = np.asarray(self.rms, dtype=float)
            if rms.shape != t.shape:
                raise DomainError("rms column must match the frame count")
            object.__setattr__(self, "rms", rms)

    @classmethod
    def from_frequencies(cls, times, frequencies, confidence, source: TrackSource,
                         constants: PhysicsConstants = PhysicsConstants(), rms=None) -> "PitchTrack":
        f = np.asarray(frequencies, dtype=float).copy()
        f[~(f > 0)] = np.nan
        lam = np.full_like(f, np.nan)
        voiced = ~np.isnan(f)
        lam[voiced] = constants.speed_of_sound / f[voiced]
        return cls(np.asarray(times, dtype=float), f, lam, np.asarray(confidence, dtype=float), source, rms)

    @classmethod
    def from_wavelengths(cls, times, wavelengths, confidence=None, source: TrackSource = TrackSource.FITTED,
                         constants: PhysicsConstants = PhysicsConstants(), rms=None) -> "PitchTrack":
        lam = np.asarray(wavelengths, dtype=float).copy()
        lam[~(lam > 0)] = np.nan
        f = np.full_like(lam, np.nan)
        voiced = ~np.isnan(lam)
        f[voiced] = constants.speed_of_sound / lam[voiced]
        conf = np.ones_like(lam) if confidence is None else np.asarray(confidence, dtype=float)
        return cls(np.asarray(times, dtype=float), f, lam, np.where(voiced, conf, 0.0), source, rms)

    @property
    def voiced(self) -> np.ndarray:
        return ~np.isnan(self.frequencies)

    @property
    def n_voiced(self) -> int:
        return int(self.voiced.sum())

    def __len__(self) -> int:
        return len(self.times)

    def truncate(self, t_cut: float) -> "PitchTrack":
        keep = self.times <= t_cut + 1e-12
        return PitchTrack(
            self.times[keep], self.frequencies[keep], self.wavelengths[keep], self.confidence[keep],
            self.source, None if self.rms is None else self.rms[keep],
        )

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({
            "time_s": self.times,
            "f_hz": self.frequencies,
            "lambda_m": self.wavelengths,
            "confidence": self.confidence,
            "voiced": self.voiced.astype(int),
        })
        if self.rms is not None:
            df["rms"] = self.rms
        return df


@dataclass(frozen=True)
class RadialParams:
    f0: float
    xi: float

    def __post_init__(self):
        if not self.f0 > 0:
            raise DomainError(f"radial f0 must be positive, got {self.f0}")
        if not self.xi >= 0:
            raise DomainError(f"radial xi must be non-negative, got {self.xi}")

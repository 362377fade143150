"""Time-frequency analysis and pitch tracking.

Spectrogram, the per-frame argmax tracker, YIN, robust wavelength-curve fitting
and the wavelength-bin target encoding.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import statsmodels.api as sm
from scipy import ndimage
from scipy.optimize import least_squares
from scipy.signal import get_window

from .core import (
    AudioBuffer,
    DomainError,
    InsufficientDataError,
    PhysicsConstants,
    PitchTrack,
    TrackSource,
)

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 1024
DEFAULT_HOP = 256
DEFAULT_BAND = (80.0, 6000.0)


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # frames x bins
    frame_times: np.ndarray
    bin_freqs: np.ndarray
    window_size: int
    hop_size: int
    sample_rate: int
    n_fft: int
    window_energy: float  # sum of squared window taps

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[0]

    def frame_energy(self) -> np.ndarray:
        """Windowed time-domain energy of each frame, via Parseval on the one-sided spectrum."""
        power = self.magnitudes ** 2
        weights = np.full(power.shape[1], 2.0)
        weights[0] = 1.0
        if self.n_fft % 2 == 0:
            weights[-1] = 1.0
        return power @ weights / self.n_fft

    def frame_rms(self) -> np.ndarray:
        return np.sqrt(self.frame_energy() / self.window_energy)


def spectrogram(audio: AudioBuffer, window_size: int = DEFAULT_WINDOW, hop_size: int = DEFAULT_HOP,
                n_fft: Optional[int] = None) -> Spectrogram:
    """Hann-windowed magnitude STFT with frames centred on t = i * hop / sr."""
    n_fft = window_size if n_fft is None else int(n_fft)
    if window_size < 2 or hop_size < 1 or n_fft < window_size:
        raise DomainError("need window_size >= 2, hop_size >= 1 and n_fft >= window_size")
    x = audio.samples
    if len(x) < window_size:
        raise DomainError(f"audio has {len(x)} samples, shorter than one {window_size}-sample window")

    window = get_window("hann", window_size)
    padded = np.pad(x, window_size // 2)
    frames = np.lib.stride_tricks.sliding_window_view(padded, window_size)[::hop_size]
    mags = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=1))

    return Spectrogram(
        magnitudes=mags,
        frame_times=np.arange(mags.shape[0]) * hop_size / audio.sample_rate,
        bin_freqs=np.fft.rfftfreq(n_fft, 1.0 / audio.sample_rate),
        window_size=window_size,
        hop_size=hop_size,
        sample_rate=audio.sample_rate,
        n_fft=n_fft,
        window_energy=float(np.sum(window ** 2)),
    )


def _voicing_mask(rms, floor):
    """Frames whose RMS clears `floor` times the file's 95th-percentile RMS."""
    if len(rms) == 0:
        return np.zeros(0, dtype=bool)
    reference = np.percentile(rms, 95)
    if reference <= 0:
        return np.zeros(len(rms), dtype=bool)
    return rms > floor * reference


def track_argmax(spec: Spectrogram, band: Tuple[float, float] = DEFAULT_BAND, smoothing: int = 5,
                 voicing_floor: float = 0.01, min_confidence: float = 0.01, interpolate: bool = True,
                 constants: PhysicsConstants = PhysicsConstants()) -> PitchTrack:
    """Per-frame spectral peak within `band` (inclusive), median-filtered over time.

    With `interpolate`, the peak bin is refined by a parabola through the log
    magnitudes of its neighbours.
    """
    f_min, f_max = band
    nyquist = spec.sample_rate / 2.0
    if f_min < 0 or f_max > nyquist or f_min > f_max:
        raise DomainError(f"band {band} must lie within [0, {nyquist}] Hz")
    band_idx = np.flatnonzero((spec.bin_freqs >= f_min) & (spec.bin_freqs <= f_max))
    if len(band_idx) == 0:
        raise DomainError(f"band {band} contains no frequency bins")

    mags = spec.magnitudes
    rows = np.arange(spec.n_frames)
    k = band_idx[np.argmax(mags[:, band_idx], axis=1)]
    peak = mags[rows, k]
    bin_width = spec.bin_freqs[1] - spec.bin_freqs[0]
    freqs = spec.bin_freqs[k].astype(float)

    if interpolate:
        inner = (k > 0) & (k < mags.shape[1] - 1)
        left = np.where(inner, mags[rows, np.clip(k - 1, 0, None)], 0.0)
        right = np.where(inner, mags[rows, np.clip(k + 1, None, mags.shape[1] - 1)], 0.0)
        ok = inner & (left > 0) & (right > 0) & (peak > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            a, b, c = np.log(left), np.log(peak), np.log(right)
            denom = a - 2 * b + c
            delta = np.where(ok & (denom < 0), 0.5 * (a - c) / denom, 0.0)
        freqs += np.clip(np.nan_to_num(delta), -0.5, 0.5) * bin_width

    total = mags.sum(axis=1)
    confidence = np.divide(peak, total, out=np.zeros_like(peak), where=total > 0)
    rms = spec.frame_rms()
    voiced = _voicing_mask(rms, voicing_floor) & (confidence >= min_confidence)

    if smoothing > 1 and voiced.any():
        freqs[voiced] = ndimage.median_filter(freqs[voiced], size=int(smoothing), mode="nearest")
    freqs[~voiced] = np.nan
    logger.debug(f"argmax tracker: {voiced.sum()} of {len(voiced)} frames voiced")
    return PitchTrack.from_frequencies(spec.frame_times, freqs, confidence, TrackSource.ARGMAX, constants, rms=rms)


def track_yin(audio: AudioBuffer, frame_size: int = 2048, hop: int = DEFAULT_HOP, threshold: float = 0.1,
              f_min: float = DEFAULT_BAND[0], f_max: float = DEFAULT_BAND[1], voicing_floor: float = 0.01,
              constants: PhysicsConstants = PhysicsConstants()) -> PitchTrack:
    """YIN with a time-centred difference function.

    Both segments compared at lag tau straddle the frame centre, so a swept tone
    is measured at the frame time whatever the lag.
    """
    sr = audio.sample_rate
    w = frame_size // 2
    max_lag = frame_size - w
    if sr / f_min > max_lag:
        raise DomainError(f"frame_size {frame_size} is shorter than two periods of {f_min} Hz")
    tau_max = int(np.ceil(sr / f_min))
    tau_min = max(2, int(np.floor(sr / f_max)))
    if tau_min >= tau_max:
        raise DomainError(f"empty lag range for f in [{f_min}, {f_max}] Hz")

    x = audio.samples
    taus = np.arange(tau_max + 2)
    offsets = -((w + taus) // 2)
    idx1 = offsets[:, None] + np.arange(w)[None, :]
    idx2 = idx1 + taus[:, None]
    pad = (w + taus[-1]) // 2 + taus[-1] + 1
    padded = np.pad(x, pad)
    centers = np.arange(0, len(x) + 1, hop) + pad
    times = (centers - pad) / sr

    n = len(centers)
    freqs = np.full(n, np.nan)
    confidence = np.zeros(n)
    rms = np.zeros(n)
    batch = 32
    for start in range(0, n, batch):
        c = centers[start:start + batch]
        seg1 = padded[c[:, None, None] + idx1[None]]
        seg2 = padded[c[:, None, None] + idx2[None]]
        diff = np.sum((seg1 - seg2) ** 2, axis=2)
        rms[start:start + batch] = np.sqrt(np.mean(seg1[:, 0, :] ** 2, axis=1))

        cumulative = np.cumsum(diff[:, 1:], axis=1)
        cmndf = np.ones_like(diff)
        np.divide(diff[:, 1:] * taus[1:], cumulative, out=cmndf[:, 1:], where=cumulative > 0)

        for row, curve in enumerate(cmndf):
            below = np.flatnonzero(curve[tau_min:tau_max] < threshold)
            if len(below) == 0:
                continue
            tau = tau_min + below[0]
            while tau + 1 < tau_max and curve[tau + 1] < curve[tau]:
                tau += 1
            a, b, cc = curve[tau - 1], curve[tau], curve[tau + 1]
            denom = a - 2 * b + cc
            shift = 0.5 * (a - cc) / denom if denom > 0 else 0.0
            freqs[start + row] = sr / (tau + np.clip(shift, -1.0, 1.0))
            confidence[start + row] = 1.0 - b

    voiced = _voicing_mask(rms, voicing_floor) & ~np.isnan(freqs)
    freqs[~voiced] = np.nan
    logger.debug(f"yin tracker: {voiced.sum()} of {n} frames voiced")
    return PitchTrack.from_frequencies(times, freqs, confidence, TrackSource.YIN, constants, rms=rms)


class CurveModel(str, Enum):
    LINEAR = "linear"
    POLY2 = "poly2"
    FRUSTUM = "frustum"
    SQRT = "sqrt"


def _grid(t):
    return np.atleast_1d(np.asarray(t, dtype=float))


class _CurveFamily:
    """A parametric lambda(t) family.

    `design` returns a system A u = b that is linear in u for every family, so a
    RANSAC hypothesis is one small linear solve; `params_from_solution` maps u to
    the family's own parameters.
    """

    n_params = 0
    linear_in_params = False

    def design(self, t, y):
        raise NotImplementedError

    def params_from_solution(self, u):
        return u

    def evaluate(self, params, t):
        raise NotImplementedError

    def derivative(self, params, t):
        raise NotImplementedError

    @property
    def n_samples(self) -> int:
        return self.n_params

    @staticmethod
    def _cols(params):
        p = np.atleast_2d(params)
        return [p[:, [i]] for i in range(p.shape[1])]

    @staticmethod
    def _shape(out, params, t):
        out = np.broadcast_to(out, (np.atleast_2d(params).shape[0], np.size(t)))
        if np.ndim(params) == 1:
            out = out[0]
        if np.ndim(t) == 0:
            out = out[..., 0]
        return np.array(out)


class _Polynomial(_CurveFamily):
    linear_in_params = True

    def __init__(self, degree: int):
        self.n_params = degree + 1

    def design(self, t, y):
        return np.vander(t, self.n_params, increasing=True), y

    def evaluate(self, params, t):
        cols = self._cols(params)
        out = sum(c * _grid(t) ** i for i, c in enumerate(cols))
        return self._shape(out, params, t)

    def derivative(self, params, t):
        cols = self._cols(params)
        tt = _grid(t)
        out = sum(i * c * tt ** (i - 1) for i, c in enumerate(cols) if i > 0)
        return self._shape(out, params, t)


class _SqrtFamily(_CurveFamily):
    """lambda = a sqrt(b - t) + d, linearised as lambda^2 = u0 + u1 t + u2 lambda."""

    n_params = 3

    def design(self, t, y):
        return np.column_stack([np.ones_like(t), t, y]), y ** 2

    def params_from_solution(self, u):
        u = np.atleast_2d(u)
        d = u[:, 2] / 2.0
        a_sq = -u[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(a_sq > 0, np.sqrt(np.abs(a_sq)), np.nan)
            b = (u[:, 0] + d ** 2) / a_sq
        return np.column_stack([a, b, d])

    def evaluate(self, params, t):
        a, b, d = self._cols(params)
        out = a * np.sqrt(np.maximum(b - _grid(t), 0.0)) + d
        return self._shape(out, params, t)

    def derivative(self, params, t):
        a, b, _ = self._cols(params)
        gap = b - _grid(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(gap > 0, -a / (2.0 * np.sqrt(np.abs(gap))), np.nan)
        return self._shape(out, params, t)


class _FrustumFamily(_CurveFamily):
    """lambda = A + cbrt(k + m t), linearised as lambda^3 = c0 + c1 t + c2 lambda + c3 lambda^2.

    Constant inflow into a conical frustum makes the surface radius grow as the
    cube root of time, and lambda is affine in that radius.
    """

    n_params = 3

    @property
    def n_samples(self) -> int:
        return 4

    def design(self, t, y):
        return np.column_stack([np.ones_like(t), t, y, y ** 2]), y ** 3

    def params_from_solution(self, u):
        u = np.atleast_2d(u)
        offset = u[:, 3] / 3.0
        return np.column_stack([offset, u[:, 0] - offset ** 3, u[:, 1]])

    def evaluate(self, params, t):
        offset, k, m = self._cols(params)
        out = offset + np.cbrt(k + m * _grid(t))
        return self._shape(out, params, t)

    def derivative(self, params, t):
        _, k, m = self._cols(params)
        root = np.cbrt(k + m * _grid(t))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = m / (3.0 * root ** 2)
        return self._shape(out, params, t)


_FAMILIES = {
    CurveModel.LINEAR: _Polynomial(1),
    CurveModel.POLY2: _Polynomial(2),
    CurveModel.SQRT: _SqrtFamily(),
    CurveModel.FRUSTUM: _FrustumFamily(),
}


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 500
    inlier_threshold: float = 0.02
    min_samples: int = 10

    def __post_init__(self):
        if self.iterations < 1 or self.inlier_threshold <= 0 or self.min_samples < 1:
            raise DomainError("RANSAC needs iterations >= 1, inlier_threshold > 0, min_samples >= 1")


def _refit(family, t, y, weights, start):
    if family.linear_in_params:
        design, target = family.design(t, y)
        return np.asarray(sm.WLS(target, design, weights=weights).fit().params, dtype=float)
    scale = np.sqrt(weights)
    result = least_squares(lambda p: scale * (family.evaluate(p, t) - y), start, x_scale="jac")
    if not np.all(np.isfinite(result.x)):
        return start
    return result.x


def ransac_fit(x: np.ndarray, y: np.ndarray, model, config: RansacConfig = RansacConfig(), seed: int = 0,
               weights: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded RANSAC over a curve family; returns (params, inlier mask).

    Hypotheses come from minimal samples and are scored by truncated squared
    residuals. The consensus set is refitted by weighted least squares until the
    inlier set stops changing.
    """
    family = _FAMILIES[CurveModel(model)]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if weights is None else np.clip(np.asarray(weights, dtype=float), 1e-6, None)
    n, p = len(x), family.n_samples
    if n < max(config.min_samples, p):
        raise InsufficientDataError(f"{n} points, need at least {max(config.min_samples, p)}")

    thr = config.inlier_threshold
    rng = np.random.default_rng(seed)
    picks = np.argsort(rng.random((config.iterations, n)), axis=1)[:, :p]
    design, target = family.design(x, y)
    solutions = np.einsum("kij,kj->ki", np.linalg.pinv(design[picks]), target[picks])
    hypotheses = family.params_from_solution(solutions)

    with np.errstate(all="ignore"):
        residuals = family.evaluate(hypotheses, x) - y
    cost = np.where(np.isfinite(residuals), np.minimum(residuals ** 2, thr ** 2), thr ** 2).sum(axis=1)
    cost[~np.all(np.isfinite(hypotheses), axis=1)] = np.inf
    if not np.isfinite(cost).any():
        raise InsufficientDataError(f"no valid {family.__class__.__name__} hypothesis")
    params = hypotheses[np.argmin(cost)]

    with np.errstate(all="ignore"):
        mask = np.abs(family.evaluate(params, x) - y) < thr
    for _ in range(3):
        if mask.sum() < p:
            break
        params = _refit(family, x[mask], y[mask], w[mask], params)
        with np.errstate(all="ignore"):
            new_mask = np.abs(family.evaluate(params, x) - y) < thr
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    return np.asarray(params, dtype=float), mask


@dataclass(frozen=True)
class FittedCurve:
    model: CurveModel
    coefficients: np.ndarray
    inlier_mask: np.ndarray
    residual_rms: float
    domain: Tuple[float, float]
    inlier_fraction: float = 1.0

    def evaluate(self, t):
        out = _FAMILIES[self.model].evaluate(self.coefficients, t)
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, t):
        out = _FAMILIES[self.model].derivative(self.coefficients, t)
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class SampledCurve:
    """An exact lambda(t) given as samples; linear interpolation in between."""

    times: np.ndarray
    wavelengths: np.ndarray
    _slopes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        lam = np.asarray(self.wavelengths, dtype=float)
        if t.shape != lam.shape or len(t) < 2 or np.any(np.diff(t) <= 0):
            raise DomainError("a sampled curve needs at least two strictly increasing times")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "wavelengths", lam)
        object.__setattr__(self, "_slopes", np.gradient(lam, t))

    @classmethod
    def from_series(cls, series) -> "SampledCurve":
        return cls(series.index.to_numpy(dtype=float), series.to_numpy(dtype=float))

    @property
    def domain(self) -> Tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def evaluate(self, t):
        out = np.interp(t, self.times, self.wavelengths)
        return float(out) if np.ndim(out) == 0 else out

    def derivative(self, t):
        out = np.interp(t, self.times, self._slopes)
        return float(out) if np.ndim(out) == 0 else out


def fit_wavelength(track: PitchTrack, model=CurveModel.LINEAR, ransac: RansacConfig = RansacConfig(),
                   rng_seed: int = 0, domain: Optional[Tuple[float, float]] = None) -> FittedCurve:
    """Robust lambda(t) fit over the voiced frames, weighted by frame confidence."""
    model = CurveModel(model)
    voiced = track.voiced
    if voiced.sum() < ransac.min_samples:
        raise InsufficientDataError(f"{voiced.sum()} voiced frames, need at least {ransac.min_samples}")
    t = track.times[voiced]
    lam = track.wavelengths[voiced]
    params, mask = ransac_fit(t, lam, model, ransac, rng_seed, track.confidence[voiced])

    family = _FAMILIES[model]
    with np.errstate(all="ignore"):
        residuals = family.evaluate(params, t) - lam
    rms = float(np.sqrt(np.mean(residuals[mask] ** 2))) if mask.any() else float("inf")
    frame_mask = np.zeros(len(track), dtype=bool)
    frame_mask[np.flatnonzero(voiced)[mask]] = True
    if domain is None:
        domain = (float(track.times[0]), float(track.times[-1]))
    logger.debug(f"{model.value} fit: {mask.sum()}/{len(mask)} inliers, rms {rms:.4g} m")
    return FittedCurve(model, params, frame_mask, rms, (float(domain[0]), float(domain[1])),
                       float(mask.mean()))


@dataclass(frozen=True)
class BinEncodingConfig:
    n_bins: int = 64
    range_cm: float = 100.0
    blur_sigma: float = 1.25

    def __post_init__(self):
        if self.n_bins < 2 or not self.range_cm > 0 or not self.blur_sigma > 0:
            raise DomainError("bin encoding needs n_bins >= 2, range_cm > 0 and blur_sigma > 0")

    @property
    def bin_width_cm(self) -> float:
        return self.range_cm / self.n_bins

    @property
    def bin_centers_m(self) -> np.ndarray:
        return (np.arange(self.n_bins) + 0.5) * self.bin_width_cm / 100.0


def encode_bins(wavelength: float, config: BinEncodingConfig = BinEncodingConfig()) -> np.ndarray:
    """Gaussian-blurred one-hot target over wavelength bins, summing to 1."""
    lam_cm = float(wavelength) * 100.0
    if not np.isfinite(lam_cm):
        raise DomainError(f"wavelength must be finite, got {wavelength}")
    if not 0.0 <= lam_cm <= config.range_cm:
        logger.warning(f"wavelength {lam_cm:.2f} cm outside [0, {config.range_cm}] cm, clamped to the boundary bin")
    center = int(np.clip(np.floor(lam_cm / config.bin_width_cm), 0, config.n_bins - 1))
    bins = np.arange(config.n_bins)
    target = np.exp(-0.5 * ((bins - center) / config.blur_sigma) ** 2)
    return target / target.sum()


def decode_bins(probabilities: Sequence[float], config: BinEncodingConfig = BinEncodingConfig()) -> float:
    """Expected wavelength (m) under a bin distribution."""
    p = np.asarray(probabilities, dtype=float)
    if p.shape != (config.n_bins,) or p.sum() <= 0:
        raise DomainError(f"expected {config.n_bins} non-negative probabilities")
    return float(np.dot(p / p.sum(), config.bin_centers_m))

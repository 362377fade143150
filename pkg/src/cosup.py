"""Linking audio wavelengths to pixel measurements of the same pour.

Quarter wavelengths are metric air-column lengths (plus end correction); a
camera sees the same column in pixels. Their ratio is a per-recording scale
factor, and heatmap ridges of frame differences give pixel pseudo labels.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import ndimage

from .core import DomainError, InsufficientDataError, PhysicsConstants
from .pitch import CurveModel, FittedCurve, RansacConfig, SampledCurve, ransac_fit

logger = logging.getLogger(__name__)

Curve = Union[FittedCurve, SampledCurve]

PLAUSIBLE_ALPHA = (30.0, 80.0)


@dataclass(frozen=True)
class PixelTrack:
    times: np.ndarray
    lengths_px: np.ndarray
    radius_px: float
    image_height_px: float
    coefficients: Optional[np.ndarray] = None  # row polynomial, when fitted from a heatmap

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        l = np.asarray(self.lengths_px, dtype=float)
        if t.shape != l.shape or t.ndim != 1:
            raise DomainError("pixel track times and lengths must be 1-D arrays of equal length")
        if not (self.radius_px > 0 and self.image_height_px > 0):
            raise DomainError("radius_px and image_height_px must be positive")
        if np.any(l < 0) or np.any(l > self.image_height_px):
            raise DomainError(f"pixel lengths must lie in [0, {self.image_height_px}]")
        order = np.argsort(t, kind="stable")
        object.__setattr__(self, "times", t[order])
        object.__setattr__(self, "lengths_px", l[order])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"time_s": self.times, "l_px": self.lengths_px})

    def scaled(self, zoom: float) -> "PixelTrack":
        """The same track under a digital zoom."""
        return PixelTrack(self.times, self.lengths_px * zoom, self.radius_px * zoom, self.image_height_px * zoom)


@dataclass(frozen=True)
class TemporalDifferenceMap:
    values: np.ndarray  # frames x image rows
    frame_times: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        t = np.asarray(self.frame_times, dtype=float)
        if v.ndim != 2 or v.shape[0] != len(t):
            raise DomainError("difference map must be frames x rows with one time per frame")
        if np.any(v < 0):
            raise DomainError("difference map entries must be non-negative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "frame_times", t)


@dataclass(frozen=True)
class ScaleEstimate:
    alpha: float
    times: np.ndarray
    ratios: np.ndarray
    weights: np.ndarray
    plausible_range: Tuple[float, float] = PLAUSIBLE_ALPHA

    @property
    def in_range(self) -> bool:
        lo, hi = self.plausible_range
        return lo <= self.alpha <= hi

    def to_report(self) -> dict:
        return {
            "alpha": round(self.alpha, 9),
            "in_plausible_range": self.in_range,
            "plausible_range": list(self.plausible_range),
            "n_frames": int(len(self.ratios)),
        }


def _overlap(curve, pixels):
    lo, hi = curve.domain
    keep = (pixels.times >= lo - 1e-9) & (pixels.times <= hi + 1e-9)
    if not keep.any():
        raise DomainError(f"pixel track [{pixels.times[0]:.3g}, {pixels.times[-1]:.3g}] s does not overlap "
                          f"the wavelength curve [{lo:.3g}, {hi:.3g}] s")
    return keep


def _quarter_wavelengths(curve, times):
    lam = np.asarray(curve.evaluate(times), dtype=float)
    if not np.all(lam > 0):
        raise DomainError("wavelength must be positive wherever the tracks overlap")
    return lam / 4.0


def estimate_scale(lambda_curve: Curve, pixels: PixelTrack, rms: Union[pd.Series, np.ndarray, None] = None,
                   constants: PhysicsConstants = PhysicsConstants(),
                   plausible_range: Tuple[float, float] = PLAUSIBLE_ALPHA) -> ScaleEstimate:
    """RMS-weighted mean of pixel-to-metric length ratios over the overlap.

    `rms` is either a time-indexed series (interpolated to the pixel frames) or an
    array aligned with the pixel frames; None weighs frames uniformly.
    """
    keep = _overlap(lambda_curve, pixels)
    t = pixels.times[keep]
    if rms is None:
        weights = np.ones(len(t))
    elif isinstance(rms, pd.Series):
        weights = np.interp(t, rms.index.to_numpy(dtype=float), rms.to_numpy(dtype=float))
    else:
        weights = np.asarray(rms, dtype=float)
        if weights.shape != pixels.times.shape:
            raise DomainError("rms array must align with the pixel frames")
        weights = weights[keep]
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise DomainError("rms weights must be finite and non-negative")
    if weights.sum() <= 0:
        raise DomainError("rms weights are all zero")

    ratios = (pixels.lengths_px[keep] + constants.beta * pixels.radius_px) / _quarter_wavelengths(lambda_curve, t)
    alpha = float(np.sum(weights * ratios) / np.sum(weights))
    estimate = ScaleEstimate(alpha, t, ratios, weights, plausible_range)
    if not estimate.in_range:
        logger.warning(f"scale factor {alpha:.2f} is outside the plausible range "
                       f"[{plausible_range[0]:g}, {plausible_range[1]:g}]")
    return estimate


def cosupervision_residual(lambda_curve: Curve, pixels: PixelTrack, alpha: float,
                           constants: PhysicsConstants = PhysicsConstants()) -> Tuple[pd.Series, float]:
    """Per-frame mismatch alpha lambda/4 - (l_px + beta r_px), and its mean square."""
    keep = _overlap(lambda_curve, pixels)
    t = pixels.times[keep]
    residual = alpha * _quarter_wavelengths(lambda_curve, t) - (pixels.lengths_px[keep] + constants.beta * pixels.radius_px)
    series = pd.Series(residual, index=pd.Index(t, name="t"), name="residual_px")
    return series, float(np.mean(residual ** 2))


def build_temporal_difference_map(frames: np.ndarray, frame_times, mask: Optional[np.ndarray] = None,
                                  sigma: Tuple[float, float] = (2.0, 2.0)) -> TemporalDifferenceMap:
    """Row profile of frame-to-frame change, smoothed over frames and rows.

    `frames` is frames x rows x columns (grey levels); `mask` keeps the pixels
    inside the container.
    """
    frames = np.asarray(frames, dtype=float)
    t = np.asarray(frame_times, dtype=float)
    if frames.ndim != 3 or frames.shape[0] != len(t) or len(t) < 2:
        raise DomainError("need at least two frames shaped frames x rows x columns")
    diff = np.abs(np.diff(frames, axis=0))
    if mask is not None:
        diff = diff * np.asarray(mask, dtype=bool)[None]
    peak = diff.max()
    if peak > 0:
        diff /= peak
    profile = ndimage.gaussian_filter(diff.mean(axis=2), sigma=sigma)
    return TemporalDifferenceMap(np.clip(profile, 0.0, None), (t[1:] + t[:-1]) / 2.0)


def _ridge_rows(values, top, bottom):
    band = values[:, top:bottom + 1]
    k = np.argmax(band, axis=1)
    rows = np.arange(len(band))
    peak = band[rows, k]
    left = np.where(k > 0, band[rows, np.clip(k - 1, 0, None)], 0.0)
    right = np.where(k < band.shape[1] - 1, band[rows, np.clip(k + 1, None, band.shape[1] - 1)], 0.0)
    ok = (left > 0) & (right > 0) & (peak > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        a, b, c = np.log(left), np.log(peak), np.log(right)
        denom = a - 2 * b + c
        delta = np.where(ok & (denom < 0), 0.5 * (a - c) / denom, 0.0)
    return top + k + np.clip(np.nan_to_num(delta), -0.5, 0.5), peak


def fit_pseudo_labels(tdm: TemporalDifferenceMap, container_rows: Tuple[int, int], ransac_seed: int = 0, *,
                      radius_px: float, ransac: RansacConfig = RansacConfig(inlier_threshold=2.0)) -> PixelTrack:
    """Pixel air-column lengths from the liquid-surface ridge of a difference map.

    The ridge row of each frame is followed by a quadratic in time fitted with
    RANSAC; the length is the fitted row's distance below the container top.
    """
    top, bottom = int(container_rows[0]), int(container_rows[1])
    n_frames, n_rows = tdm.values.shape
    if not 0 <= top < bottom < n_rows:
        raise DomainError(f"container rows ({top}, {bottom}) must satisfy 0 <= top < bottom < {n_rows}")
    if n_frames < 10:
        raise InsufficientDataError(f"difference map has {n_frames} frames, need at least 10")
    if not np.any(tdm.values[:, top:bottom + 1] > 0):
        raise DomainError("difference map is all zeros inside the container")

    rows, peak = _ridge_rows(tdm.values, top, bottom)
    active = peak > 0
    params, inliers = ransac_fit(tdm.frame_times[active], rows[active], CurveModel.POLY2, ransac, ransac_seed,
                                 weights=peak[active])
    fitted = params[0] + params[1] * tdm.frame_times + params[2] * tdm.frame_times ** 2
    lengths = np.clip(fitted - top, 0.0, bottom - top)
    logger.info(f"pseudo labels: {inliers.sum()}/{len(inliers)} ridge frames are inliers")
    return PixelTrack(tdm.frame_times, lengths, radius_px, float(n_rows), coefficients=params)

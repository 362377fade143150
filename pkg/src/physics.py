"""Resonance laws, fill dynamics under constant flow, and their inversion.

A closed pipe of air-column length l and radius R resonates at
c / (4 (l + beta R)), so the fundamental wavelength is 4 (l + beta R). For a
cylinder filled at constant rate that wavelength falls linearly in time, and
its boundary values, slope and level give back the container and the pour.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy.optimize import brentq

from .core import (
    ArrayLike,
    ContainerShape,
    ContainerSpec,
    DomainError,
    FillProfile,
    InsufficientDataError,
    NonPhysicalError,
    NoPourDetectedError,
    PhysicsConstants,
    PitchTrack,
    RadialParams,
    ShapeLabel,
)
from .pitch import CurveModel, FittedCurve, RansacConfig, SampledCurve, fit_wavelength

logger = logging.getLogger(__name__)

Curve = Union[FittedCurve, SampledCurve]

ML_PER_M3 = 1e6


def axial_frequency(l: ArrayLike, R: float, constants: PhysicsConstants = PhysicsConstants()) -> ArrayLike:
    """Closed-pipe fundamental with end correction: c / (4 (l + beta R))."""
    l_arr = np.asarray(l, dtype=float)
    if np.any(l_arr < 0):
        raise DomainError("air-column length must be non-negative")
    if not R > 0:
        raise DomainError(f"radius must be positive, got {R}")
    effective = l_arr + constants.beta * R
    if np.any(effective <= 0):
        raise DomainError("effective length l + beta R must be positive")
    f = constants.speed_of_sound / (4.0 * effective)
    return float(f) if f.ndim == 0 else f


def radial_frequency(l: ArrayLike, H: float, params: RadialParams) -> ArrayLike:
    """Wall mode lowered by liquid loading: f0 / sqrt(1 + xi (1 - l/H)^3)."""
    l_arr = np.asarray(l, dtype=float)
    if not H > 0:
        raise DomainError(f"height must be positive, got {H}")
    if np.any(l_arr < 0) or np.any(l_arr > H):
        raise DomainError(f"air-column length must lie in [0, {H}]")
    f = params.f0 / np.sqrt(1.0 + params.xi * (1.0 - l_arr / H) ** 3)
    return float(f) if f.ndim == 0 else f


def fill_profile(container: ContainerSpec, flow_Q: float, n_samples: int = 1001) -> FillProfile:
    """Air-column length over a full pour at constant volume flow (m^3/s)."""
    if not flow_Q > 0:
        raise DomainError(f"flow rate must be positive, got {flow_Q}")
    if n_samples < 2:
        raise DomainError("a fill profile needs at least two samples")

    H = container.height
    T = container.volume / flow_Q
    t = np.linspace(0.0, T, n_samples)
    if container.shape is ContainerShape.FRUSTUM and container.radius_top != container.radius_base:
        levels = [
            brentq(lambda h, v=v: container.filled_volume(h) - v, 0.0, H, xtol=1e-14)
            for v in flow_Q * t[1:-1]
        ]
        l = np.concatenate([[H], H - np.asarray(levels), [0.0]])
    else:
        # cylinder body (bottlenecks fill their cylindrical body)
        l = H - flow_Q / (math.pi * container.radius_base ** 2) * t
        l[0], l[-1] = H, 0.0
    return FillProfile(T, t, np.clip(l, 0.0, H))


def bottleneck_wavelength(l: ArrayLike, container: ContainerSpec,
                          constants: PhysicsConstants = PhysicsConstants()) -> ArrayLike:
    """Helmholtz wavelength of a bottle whose body holds an air column of length l.

    The cavity is the body air plus the neck; the neck length carries an end
    correction at both openings.
    """
    if container.shape is not ContainerShape.BOTTLENECK:
        raise DomainError("Helmholtz wavelength needs a bottleneck container")
    r_n, L_n = container.neck_radius, container.neck_length
    L_eff = L_n + 2.0 * constants.beta * r_n
    cavity = container.radius_base ** 2 * np.asarray(l, dtype=float) + r_n ** 2 * L_n
    lam = 2.0 * math.pi * np.sqrt(L_eff * cavity) / r_n
    return float(lam) if np.ndim(lam) == 0 else lam


def wavelength_profile(container: ContainerSpec, fill: FillProfile,
                       constants: PhysicsConstants = PhysicsConstants()) -> pd.Series:
    """Fundamental wavelength (m) over the pour, indexed by time."""
    l = fill.lengths
    if container.shape is ContainerShape.BOTTLENECK:
        lam = bottleneck_wavelength(l, container, constants)
    else:
        # end correction uses the radius at the liquid surface
        surface_radius = container.radius_at(container.height - l)
        lam = 4.0 * (l + constants.beta * surface_radius)
    return pd.Series(np.asarray(lam, dtype=float), index=pd.Index(fill.times, name="t"), name="lambda_m")


def invert_length(curve: Curve, T: float, times: Optional[Sequence[float]] = None,
                  n_samples: int = 501) -> FillProfile:
    """l(t) = (lambda(t) - lambda(T)) / 4, so that l(T) = 0 exactly."""
    if not T > 0:
        raise DomainError(f"pour duration must be positive, got {T}")
    t = np.linspace(0.0, T, n_samples) if times is None else np.asarray(times, dtype=float)
    lam_end = curve.evaluate(T)
    l = (np.asarray(curve.evaluate(t), dtype=float) - lam_end) / 4.0
    l[np.isclose(t, T, rtol=0.0, atol=1e-12)] = 0.0

    negative = ~(l >= 0)
    clamped = int(negative.sum())
    if clamped:
        logger.warning(f"{clamped} of {len(l)} inverted lengths were negative or undefined, clamped to 0")
        l[negative] = 0.0
    return FillProfile(float(T), t, l, clamped=clamped)


def invert_dimensions(curve: Curve, T: float,
                      constants: PhysicsConstants = PhysicsConstants()) -> Tuple[float, float]:
    """Height and radius from the curve's boundary values."""
    lam_start = curve.evaluate(0.0)
    lam_end = curve.evaluate(T)
    if not lam_end > 0:
        raise NonPhysicalError(f"final wavelength {lam_end:.4g} m gives a non-positive radius")
    if not lam_start > lam_end:
        raise NonPhysicalError(f"wavelength does not fall over the pour ({lam_start:.4g} -> {lam_end:.4g} m)")
    if constants.beta == 0:
        raise NonPhysicalError("radius is not identifiable without an end correction")
    return (lam_start - lam_end) / 4.0, lam_end / (4.0 * constants.beta)


def invert_flow_rate(curve: Curve, R: float, times: Sequence[float]) -> pd.Series:
    """Volume flow (ml/s) from the curve's analytic slope: -(1/4) pi R^2 dlambda/dt."""
    if not R > 0:
        raise DomainError(f"radius must be positive, got {R}")
    t = np.asarray(times, dtype=float)
    slope = np.asarray(curve.derivative(t), dtype=float)
    q = -0.25 * math.pi * R ** 2 * slope * ML_PER_M3
    return pd.Series(q + 0.0, index=pd.Index(t, name="t"), name="flow_ml_s")


class DerivativeMethod(str, Enum):
    RANSAC_SLOPE = "ransac_slope"  # RANSAC line over [0, t_cut]
    EARLY_RANSAC = "early_ransac"  # RANSAC line over [0, delta]
    LOCAL_REGRESSION = "local_regression"  # weighted least squares over [0, delta]


class EndCorrectionForm(str, Enum):
    CONSISTENT = "consistent"  # lambda - 4 beta R
    PRINTED = "printed"  # lambda - beta R


@dataclass(frozen=True)
class TimeToFillConfig:
    early_window_delta: float = 0.5
    derivative_method: DerivativeMethod = DerivativeMethod.RANSAC_SLOPE
    end_correction_form: EndCorrectionForm = EndCorrectionForm.CONSISTENT

    def __post_init__(self):
        if not self.early_window_delta > 0:
            raise DomainError("early window must be positive")
        object.__setattr__(self, "derivative_method", DerivativeMethod(self.derivative_method))
        object.__setattr__(self, "end_correction_form", EndCorrectionForm(self.end_correction_form))


def _early_line(track, t_cut, config, ransac, rng_seed):
    partial = track.truncate(t_cut)
    if config.derivative_method is DerivativeMethod.RANSAC_SLOPE:
        return fit_wavelength(partial, CurveModel.LINEAR, ransac, rng_seed, domain=(0.0, t_cut))
    if config.derivative_method is DerivativeMethod.EARLY_RANSAC:
        delta = config.early_window_delta
        return fit_wavelength(partial.truncate(delta), CurveModel.LINEAR, ransac, rng_seed, domain=(0.0, delta))

    early = partial.voiced & (partial.times <= config.early_window_delta)
    if early.sum() < 2:
        raise InsufficientDataError(f"{early.sum()} voiced frames in the early window")
    t = partial.times[early]
    design = sm.add_constant(t, has_constant="add")
    fit = sm.WLS(partial.wavelengths[early], design, weights=np.clip(partial.confidence[early], 1e-6, None)).fit()
    residuals = np.asarray(fit.resid)
    return FittedCurve(CurveModel.LINEAR, np.asarray(fit.params, dtype=float), early,
                       float(np.sqrt(np.mean(residuals ** 2))), (0.0, float(t_cut)), 1.0)


def time_to_fill(lambda_partial: Union[PitchTrack, Curve], t_cut: float,
                 config: TimeToFillConfig = TimeToFillConfig(),
                 constants: PhysicsConstants = PhysicsConstants(),
                 R_estimate: Optional[float] = None, ransac: RansacConfig = RansacConfig(),
                 rng_seed: int = 0) -> float:
    """Seconds left until the container is full, seen from t_cut.

    Assumes the flow stays constant: the slope and level at t' = delta/2 extrapolate
    to the time at which the air column reaches zero. For a track, `derivative_method`
    picks the frames behind that line: every voiced frame up to t_cut
    (`ransac_slope`) or only those inside the early window (`early_ransac`,
    `local_regression`).
    """
    delta = config.early_window_delta
    if t_cut < delta:
        raise InsufficientDataError(f"cut at {t_cut:.3g} s is shorter than the {delta:.3g} s early window")

    curve = lambda_partial
    if isinstance(lambda_partial, PitchTrack):
        curve = _early_line(lambda_partial, t_cut, config, ransac, rng_seed)

    t_prime = delta / 2.0
    slope = curve.derivative(t_prime)
    if not slope < 0:
        raise NoPourDetectedError(f"wavelength slope {slope:.4g} m/s is not negative: no pour detected")
    level = curve.evaluate(t_prime)
    if R_estimate is not None:
        factor = 4.0 if config.end_correction_form is EndCorrectionForm.CONSISTENT else 1.0
        level = level - factor * constants.beta * R_estimate
    tau = -level / slope - (t_cut - t_prime)
    logger.debug(f"time to fill at {t_cut:.3f} s: {tau:.3f} s (slope {slope:.4g} m/s)")
    return float(tau)


@dataclass(frozen=True)
class ShapeClassification:
    label: ShapeLabel
    residuals: Dict[ShapeLabel, float]
    curves: Dict[ShapeLabel, FittedCurve] = field(default_factory=dict, repr=False)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"shape": [k.value for k in self.residuals], "normalized_residual": list(self.residuals.values())}
        )


_SHAPE_FAMILIES = (
    (ShapeLabel.CYLINDRICAL, CurveModel.LINEAR),
    (ShapeLabel.BOTTLENECK, CurveModel.SQRT),
    (ShapeLabel.SEMICONICAL, CurveModel.FRUSTUM),
)


def classify_shape(track: PitchTrack, T: float, ransac: RansacConfig = RansacConfig(), rng_seed: int = 0,
                   tie_tolerance: float = 0.5, noise_floor: float = 0.003) -> ShapeClassification:
    """Pick the wavelength law (linear, sqrt or frustum) that explains the track best.

    Each family is scored by the RMS of its residuals truncated at the inlier
    threshold, relative to the wavelength span. The line wins whenever it is
    already at the noise floor or the alternatives are not clearly better.
    """
    voiced = track.voiced
    if voiced.sum() < 10:
        raise InsufficientDataError(f"{voiced.sum()} voiced frames, shape needs at least 10")
    t = track.times[voiced]
    lam = track.wavelengths[voiced]
    span = float(np.ptp(lam)) or 1.0
    thr = ransac.inlier_threshold

    raw, residuals, curves = {}, {}, {}
    for label, model in _SHAPE_FAMILIES:
        try:
            curve = fit_wavelength(track, model, ransac, rng_seed, domain=(0.0, T))
        except InsufficientDataError as e:
            logger.info(f"{model.value} family did not fit: {e}")
            raw[label] = residuals[label] = float("inf")
            continue
        r = np.nan_to_num(np.asarray(curve.evaluate(t)) - lam, nan=thr)
        raw[label] = float(np.sqrt(np.mean(np.minimum(r ** 2, thr ** 2))))
        residuals[label] = raw[label] / span
        curves[label] = curve

    best = min(residuals, key=residuals.get)
    cylinder = residuals[ShapeLabel.CYLINDRICAL]
    if raw[ShapeLabel.CYLINDRICAL] <= noise_floor or cylinder <= (1.0 + tie_tolerance) * residuals[best]:
        best = ShapeLabel.CYLINDRICAL
    logger.info(f"shape: {best.value} ({', '.join(f'{k.value}={v:.4g}' for k, v in residuals.items())})")
    return ShapeClassification(best, residuals, curves)


@dataclass(frozen=True)
class PropertyEstimate:
    height: float
    radius: float
    air_column: FillProfile
    flow_rate: pd.Series
    mean_flow_rate: float
    time_to_fill: Dict[float, float]
    diagnostics: Dict[str, float]

    def to_report(self) -> dict:
        """Report in cm, ml/s and s."""
        return {
            "height_cm": round(self.height * 100.0, 4),
            "radius_cm": round(self.radius * 100.0, 4),
            "flow_rate_ml_s": round(self.mean_flow_rate, 4),
            "duration_s": round(self.air_column.duration, 4),
            "time_to_fill_s": {f"{k:g}": round(v, 4) for k, v in sorted(self.time_to_fill.items())},
            "diagnostics": {k: round(float(v), 6) for k, v in sorted(self.diagnostics.items())},
        }

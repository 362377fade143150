"""Analysis pipeline and evaluation harness.

`PourAnalytics` turns a recording into a pitch track, a fitted wavelength curve
and a `PropertyEstimate`; its `evaluate*` methods run that pipeline over
synthetic or external ground-truth sets and reduce the errors into an
`EvalReport`.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .core import (
    AudioBuffer,
    ContainerShape,
    InsufficientDataError,
    NoPourDetectedError,
    PhysicsConstants,
    PitchTrack,
    PourError,
    ShapeLabel,
)
from .physics import (
    PropertyEstimate,
    ShapeClassification,
    TimeToFillConfig,
    classify_shape,
    invert_dimensions,
    invert_flow_rate,
    invert_length,
    time_to_fill,
)
from .pitch import (
    DEFAULT_BAND,
    CurveModel,
    FittedCurve,
    RansacConfig,
    Spectrogram,
    fit_wavelength,
    spectrogram,
    track_argmax,
    track_yin,
)
from .synth import SampleRanges, SynthConfig, sample_container, synthesize_pour

logger = logging.getLogger(__name__)

DEFAULT_CUTS = (0.25, 0.5, 0.75)
DEFAULT_SNRS = (None, 20.0, 10.0)


class TrackerKind(str, Enum):
    ARGMAX = "argmax"
    YIN = "yin"


@dataclass(frozen=True)
class AnalysisConfig:
    tracker: TrackerKind = TrackerKind.ARGMAX
    model: CurveModel = CurveModel.LINEAR
    window_size: int = 1024
    hop_size: int = 256
    n_fft: int = 4096
    band: Tuple[float, float] = DEFAULT_BAND
    smoothing: int = 5
    voicing_floor: float = 0.01
    min_confidence: float = 0.01
    yin_frame_size: int = 2048
    yin_threshold: float = 0.1
    ransac: RansacConfig = RansacConfig()
    cuts: Tuple[float, ...] = DEFAULT_CUTS
    time_to_fill: TimeToFillConfig = TimeToFillConfig()
    seed: int = 0
    profile_samples: int = 501

    def __post_init__(self):
        object.__setattr__(self, "tracker", TrackerKind(self.tracker))
        object.__setattr__(self, "model", CurveModel(self.model))

    def snapshot(self) -> dict:
        """Plain-JSON view of the configuration."""
        data = asdict(self)
        return json.loads(json.dumps(data, default=lambda v: v.value if isinstance(v, Enum) else str(v)))


def _label(snr_db):
    return "inf" if snr_db is None or not math.isfinite(snr_db) else f"{snr_db:g}"


class PourAnalytics:
    def __init__(self, constants: PhysicsConstants = PhysicsConstants(), config: AnalysisConfig = AnalysisConfig()):
        self.constants = constants
        self.config = config

    def spectrogram(self, audio: AudioBuffer) -> Spectrogram:
        c = self.config
        return spectrogram(audio, c.window_size, c.hop_size, c.n_fft)

    def track(self, audio: AudioBuffer) -> PitchTrack:
        c = self.config
        if c.tracker is TrackerKind.YIN:
            return track_yin(audio, c.yin_frame_size, c.hop_size, c.yin_threshold, c.band[0], c.band[1],
                             c.voicing_floor, self.constants)
        return track_argmax(self.spectrogram(audio), c.band, c.smoothing, c.voicing_floor, c.min_confidence,
                            constants=self.constants)

    def fit(self, track: PitchTrack, T: float, model: Optional[CurveModel] = None) -> FittedCurve:
        if track.n_voiced < self.config.ransac.min_samples:
            raise NoPourDetectedError(f"no pour detected: {track.n_voiced} voiced frames")
        return fit_wavelength(track, model or self.config.model, self.config.ransac, self.config.seed,
                              domain=(0.0, T))

    def estimate_properties(self, track: PitchTrack, T: float, cuts: Iterable[float] = (),
                            curve: Optional[FittedCurve] = None) -> PropertyEstimate:
        """Height, radius, air column, flow and time to fill from one pitch track.

        Time to fill at each cut fraction uses only the frames before the cut,
        with the radius recovered from the whole track.
        """
        curve = curve or self.fit(track, T)
        if not curve.evaluate(0.0) > curve.evaluate(T):
            raise NoPourDetectedError("no pour detected: the fitted wavelength does not fall")
        H, R = invert_dimensions(curve, T, self.constants)
        times = np.linspace(0.0, T, self.config.profile_samples)
        air = invert_length(curve, T, times)
        flow = invert_flow_rate(curve, R, times)

        taus = {}
        for fraction in cuts:
            try:
                taus[float(fraction)] = time_to_fill(track, fraction * T, self.config.time_to_fill, self.constants,
                                                     R, self.config.ransac, self.config.seed)
            except InsufficientDataError as e:
                logger.warning(f"no time to fill at the {fraction:g} cut: {e}")
                taus[float(fraction)] = float("nan")

        diagnostics = {
            "residual_rms_m": curve.residual_rms,
            "inlier_fraction": curve.inlier_fraction,
            "voiced_frames": float(track.n_voiced),
            "clamped_lengths": float(air.clamped),
        }
        return PropertyEstimate(H, R, air, flow, float(flow.mean()), taus, diagnostics)

    def analyze(self, audio: AudioBuffer, cuts: Iterable[float] = ()) -> Tuple[PitchTrack, FittedCurve, PropertyEstimate]:
        track = self.track(audio)
        T = audio.duration
        curve = self.fit(track, T)
        return track, curve, self.estimate_properties(track, T, cuts, curve)

    def classify(self, audio: AudioBuffer) -> ShapeClassification:
        track = self.track(audio)
        return classify_shape(track, audio.duration, self.config.ransac, self.config.seed)

    def time_to_fill_at(self, audio: AudioBuffer, fraction: float,
                        R_estimate: Optional[float]) -> Tuple[float, float]:
        """Time to fill from a recording cut at `fraction`: (with radius, without radius)."""
        t_cut = fraction * audio.duration
        partial = self.track(audio.truncate(t_cut))
        args = (self.config.time_to_fill, self.constants)
        kwargs = dict(ransac=self.config.ransac, rng_seed=self.config.seed)
        exact = time_to_fill(partial, t_cut, *args, R_estimate=R_estimate, **kwargs)
        approx = time_to_fill(partial, t_cut, *args, R_estimate=None, **kwargs)
        return exact, approx

    def evaluate_sample(self, audio: AudioBuffer, truth: pd.DataFrame, sample_id: str, snr_db: Optional[float],
                        height: float, radius: float, flow_ml_s: float, shape: str = "cylinder") -> dict:
        """Errors of one analysed recording against its ground truth (cm, ml/s, s)."""
        T = audio.duration
        record = {"sample_id": sample_id, "shape": shape, "snr_db": _label(snr_db), "duration_s": T,
                  "height_true_cm": height * 100.0, "radius_true_cm": radius * 100.0, "flow_true_ml_s": flow_ml_s}
        try:
            track, _, est = self.analyze(audio)
        except PourError as e:
            logger.warning(f"{sample_id} ({_label(snr_db)} dB): analysis failed: {e}")
            record.update(status="failed", error=str(e))
            return record

        times = track.times[track.times <= T]
        l_true = np.interp(times, truth["t"].to_numpy(), truth["l_m"].to_numpy())
        record.update(
            status="ok",
            error="",
            height_est_cm=est.height * 100.0,
            radius_est_cm=est.radius * 100.0,
            flow_est_ml_s=est.mean_flow_rate,
            l_mae_cm=float(np.mean(np.abs(est.air_column.at(times) - l_true))) * 100.0,
        )
        record["height_abs_err_cm"] = abs(record["height_est_cm"] - record["height_true_cm"])
        record["radius_abs_err_cm"] = abs(record["radius_est_cm"] - record["radius_true_cm"])
        record["flow_abs_err_ml_s"] = abs(est.mean_flow_rate - flow_ml_s)
        record["flow_rel_err"] = record["flow_abs_err_ml_s"] / flow_ml_s if flow_ml_s else float("nan")

        for fraction in self.config.cuts:
            key = f"{int(round(fraction * 100))}"
            remaining = T - fraction * T
            try:
                exact, approx = self.time_to_fill_at(audio, fraction, est.radius)
            except PourError as e:
                logger.warning(f"{sample_id}: no time to fill at the {fraction:g} cut: {e}")
                exact = approx = float("nan")
            record[f"tau_true_{key}_s"] = remaining
            record[f"tau_est_{key}_s"] = exact
            record[f"tau_approx_{key}_s"] = approx
            record[f"tau_abs_err_{key}_s"] = abs(exact - remaining)
            record[f"tau_rel_err_{key}"] = abs(exact - remaining) / remaining
        return record

    def evaluate(self, n: int, ranges: SampleRanges = SampleRanges(), snrs: Sequence[Optional[float]] = DEFAULT_SNRS,
                 seed: int = 0, synth_config: SynthConfig = SynthConfig(),
                 shape: ContainerShape = ContainerShape.CYLINDER) -> "EvalReport":
        """Sample n containers, render each at every SNR and score the pipeline."""
        if n < 1:
            raise InsufficientDataError(f"evaluation needs at least one sample, got {n}")
        records = []
        for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
            rng = np.random.default_rng(child)
            container, flow = sample_container(rng, ranges, shape)
            draw_seed = int(child.generate_state(1, dtype=np.uint64)[0])
            for snr in snrs:
                audio, truth = synthesize_pour(container, flow, replace(synth_config, noise_snr_db=snr, seed=draw_seed),
                                               self.constants)
                records.append(self.evaluate_sample(audio, truth.table, f"sample_{i:05d}", snr, container.height,
                                                    container.radius_base, flow * 1e6, container.shape.value))
            logger.info(f"evaluated sample {i + 1}/{n}")
        return EvalReport.from_records(records, self._snapshot(ranges, snrs, synth_config), seed)

    def evaluate_manifest(self, manifest: pd.DataFrame, loader) -> "EvalReport":
        """Score external recordings listed in a manifest (paths already resolved)."""
        records = []
        for row in manifest.itertuples(index=False):
            audio = loader.load_audio(row.audio)
            truth = loader.load_truth(row.truth)
            height = getattr(row, "height_m", float(truth["l_m"].iloc[0]))
            radius = getattr(row, "radius_base_m", float("nan"))
            flow = getattr(row, "flow_ml_s", float("nan"))
            snr = getattr(row, "snr_db", None)
            records.append(self.evaluate_sample(audio, truth, str(row.sample_id), None if pd.isna(snr) else float(snr),
                                                float(height), float(radius), float(flow),
                                                str(getattr(row, "shape", "cylinder"))))
        return EvalReport.from_records(records, self._snapshot(None, None, None), self.config.seed)

    def evaluate_shapes(self, n_per_shape: int, ranges: SampleRanges = SampleRanges(), snr_db: Optional[float] = 20.0,
                        seed: int = 0, synth_config: SynthConfig = SynthConfig()) -> pd.DataFrame:
        """Classify synthetic pours of every shape; one row per pour with true and predicted labels."""
        rows = []
        shapes = list(ContainerShape)
        for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_per_shape * len(shapes))):
            shape = shapes[i % len(shapes)]
            rng = np.random.default_rng(child)
            container, flow = sample_container(rng, ranges, shape)
            config = replace(synth_config, noise_snr_db=snr_db, seed=int(child.generate_state(1, dtype=np.uint64)[0]))
            audio, _ = synthesize_pour(container, flow, config, self.constants)
            try:
                predicted = self.classify(audio).label.value
            except PourError as e:
                logger.warning(f"shape sample {i}: {e}")
                predicted = ""
            rows.append({"sample": i, "true": ShapeLabel.for_shape(shape).value, "predicted": predicted})
        return pd.DataFrame(rows)

    def _snapshot(self, ranges, snrs, synth_config):
        snapshot = {"analysis": self.config.snapshot(), "constants": asdict(self.constants)}
        if ranges is not None:
            snapshot["ranges"] = {k: list(v) for k, v in asdict(ranges).items()}
        if snrs is not None:
            snapshot["snr_db"] = [_label(s) for s in snrs]
        if synth_config is not None:
            snapshot["synth"] = json.loads(json.dumps(asdict(synth_config), default=str))
        return snapshot


ERROR_COLUMNS = ("l_mae_cm", "height_abs_err_cm", "radius_abs_err_cm", "flow_abs_err_ml_s", "flow_rel_err")


@dataclass(frozen=True)
class EvalReport:
    records: pd.DataFrame
    aggregates: Dict[str, Dict[str, float]]
    config: dict
    seed: int
    precision: int = field(default=6, repr=False)

    @staticmethod
    def aggregate(records: pd.DataFrame) -> Dict[str, Dict[str, float]]:
        """Mean absolute errors per SNR level, over the samples that were analysed."""
        columns = [c for c in records.columns
                   if c in ERROR_COLUMNS or c.startswith("tau_abs_err_") or c.startswith("tau_rel_err_")]
        out = {}
        for snr, group in records.groupby("snr_db", sort=True):
            ok = group[group["status"] == "ok"] if "status" in group else group
            summary = {c: float(ok[c].mean()) for c in columns}
            summary["n_samples"] = float(len(group))
            summary["n_failed"] = float(len(group) - len(ok))
            for c in columns:
                if c.startswith("tau_abs_err_"):
                    # analysed samples whose cut produced no time to fill
                    summary[f"n_tau_failed_{c[len('tau_abs_err_'):-2]}"] = float(ok[c].isna().sum())
            out[str(snr)] = summary
        return out

    @classmethod
    def from_records(cls, records: Sequence[dict], config: dict, seed: int) -> "EvalReport":
        df = pd.DataFrame(list(records))
        return cls(df, cls.aggregate(df), config, int(seed))

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float):
                return None if math.isnan(v) else round(v, self.precision)
            return v

        return {
            "seed": self.seed,
            "config": self.config,
            "aggregates": {k: {m: clean(v) for m, v in sorted(agg.items())} for k, agg in sorted(self.aggregates.items())},
            "records": [{k: clean(v) for k, v in rec.items()} for rec in self.records.to_dict(orient="records")],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary_lines(self) -> list:
        lines = []
        for snr, agg in sorted(self.aggregates.items()):
            parts = [f"{k}={v:.4g}" for k, v in sorted(agg.items()) if not k.startswith("n_")]
            parts += [f"{k}={int(v)}" for k, v in sorted(agg.items()) if k.startswith("n_tau_failed_") and v > 0]
            lines.append(f"SNR {snr} dB ({int(agg['n_samples'])} samples, {int(agg['n_failed'])} failed): "
                         + ", ".join(parts))
        return lines

"""Reading and writing every file the package consumes or produces."""
from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy.io import wavfile
from scipy.signal import resample_poly

from .core import (
    DEFAULT_SAMPLE_RATE,
    AudioBuffer,
    ContainerSpec,
    DomainError,
    PhysicsConstants,
    PitchTrack,
    PourInputError,
    TrackSource,
)
from .cosup import PixelTrack, TemporalDifferenceMap

logger = logging.getLogger(__name__)

TRUTH_COLUMNS = ["t", "l_m", "lambda_m", "f_hz"]
TRACK_COLUMNS = ["time_s", "f_hz", "lambda_m", "confidence", "voiced"]
MANIFEST_COLUMNS = ["sample_id", "audio", "truth", "shape", "height_m", "radius_base_m", "radius_top_m",
                    "flow_ml_s", "duration_s", "snr_db", "seed"]


class PourDataLoader:
    def __init__(self, sample_rate: int = DEFAULT_SAMPLE_RATE, constants: PhysicsConstants = PhysicsConstants()):
        self.sample_rate = sample_rate
        self.constants = constants

    @contextmanager
    def _atomic(self, path, mode="w"):
        """Write to a temporary file next to `path`, then rename it into place."""
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, mode) as fh:
                yield fh
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def ensure_dir(self, path: Path) -> Path:
        try:
            Path(path).mkdir(parents=True, exist_ok=True)
            return Path(path)
        except OSError as e:
            logger.error(f"Error creating directory {path}: {e}")
            raise PourInputError(f"cannot create directory {path}: {e}") from e

    def _write(self, path, writer, mode="w"):
        try:
            with self._atomic(path, mode) as fh:
                writer(fh)
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")
            raise PourInputError(f"cannot write {path}: {e}") from e

    # container spec

    def load_container(self, path: Path) -> ContainerSpec:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Error reading container spec {path}: {e}")
            raise PourInputError(f"cannot read container spec {path}: {e}") from e
        if not isinstance(data, dict):
            raise PourInputError(f"container spec {path} must be a JSON object")
        return ContainerSpec.from_dict(data)

    def save_container(self, spec: ContainerSpec, path: Path):
        self._write(path, lambda fh: json.dump(spec.to_dict(), fh, indent=2, sort_keys=True))

    # audio

    def load_audio(self, path: Path, target_rate: Optional[int] = None) -> AudioBuffer:
        """Mono float audio at `target_rate` (the loader's rate by default)."""
        target_rate = target_rate or self.sample_rate
        try:
            rate, data = wavfile.read(path)
        except (OSError, ValueError) as e:
            logger.error(f"Error reading audio {path}: {e}")
            raise PourInputError(f"cannot read audio {path}: {e}") from e

        if data.dtype == np.uint8:
            x = (data.astype(float) - 128.0) / 128.0
        elif np.issubdtype(data.dtype, np.integer):
            x = data.astype(float) / float(np.iinfo(data.dtype).max + 1)
        else:
            x = data.astype(float)
        if x.ndim == 2:
            x = x.mean(axis=1)
        if len(x) == 0:
            raise PourInputError(f"audio file {path} has no samples")
        if not np.all(np.isfinite(x)):
            raise PourInputError(f"audio file {path} contains non-finite samples")

        if rate != target_rate:
            g = math.gcd(int(rate), int(target_rate))
            x = resample_poly(x, target_rate // g, rate // g)
            logger.info(f"resampled {path} from {rate} Hz to {target_rate} Hz")
        return AudioBuffer(int(target_rate), x)

    def save_audio(self, audio: AudioBuffer, path: Path):
        """16-bit PCM mono."""
        pcm = np.round(np.clip(audio.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
        self._write(path, lambda fh: wavfile.write(fh, audio.sample_rate, pcm), mode="wb")

    # tables

    def _read_csv(self, path, columns, what, **kwargs):
        try:
            df = pd.read_csv(path, **kwargs)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            logger.error(f"Error reading {what} {path}: {e}")
            raise PourInputError(f"cannot read {what} {path}: {e}") from e
        missing = [c for c in columns if c not in df.columns]
        if missing:
            raise PourInputError(f"{what} {path} is missing columns {missing}")
        return df

    def save_table(self, df: pd.DataFrame, path: Path, float_format: str = "%.9g"):
        self._write(path, lambda fh: df.to_csv(fh, index=False, float_format=float_format))

    def load_truth(self, path: Path) -> pd.DataFrame:
        return self._read_csv(path, TRUTH_COLUMNS, "ground truth").sort_values("t").reset_index(drop=True)

    def save_truth(self, table: pd.DataFrame, path: Path):
        self.save_table(table[TRUTH_COLUMNS], path)

    def load_track(self, path: Path) -> PitchTrack:
        df = self._read_csv(path, TRACK_COLUMNS, "pitch track")
        voiced = df["voiced"].astype(bool).to_numpy()
        f = np.where(voiced, df["f_hz"].to_numpy(dtype=float), np.nan)
        rms = df["rms"].to_numpy(dtype=float) if "rms" in df.columns else None
        try:
            return PitchTrack.from_frequencies(df["time_s"], f, df["confidence"].fillna(0.0), TrackSource.FITTED,
                                               self.constants, rms=rms)
        except DomainError as e:
            raise PourInputError(f"invalid pitch track {path}: {e}") from e

    def save_track(self, track: PitchTrack, path: Path):
        self.save_table(track.to_frame(), path)

    def load_pixel_track(self, path: Path) -> PixelTrack:
        header = {}
        try:
            with open(path) as fh:
                for line in fh:
                    if not line.startswith("#"):
                        break
                    key, _, value = line[1:].strip().partition("=")
                    header[key.strip()] = value.strip()
        except OSError as e:
            logger.error(f"Error reading pixel track {path}: {e}")
            raise PourInputError(f"cannot read pixel track {path}: {e}") from e
        try:
            radius_px = float(header["radius_px"])
            image_height_px = float(header["image_height_px"])
        except (KeyError, ValueError) as e:
            raise PourInputError(f"pixel track {path} needs radius_px and image_height_px header lines") from e
        df = self._read_csv(path, ["time_s", "l_px"], "pixel track", comment="#")
        try:
            return PixelTrack(df["time_s"].to_numpy(dtype=float), df["l_px"].to_numpy(dtype=float),
                              radius_px, image_height_px)
        except DomainError as e:
            raise PourInputError(f"invalid pixel track {path}: {e}") from e

    def save_pixel_track(self, pixels: PixelTrack, path: Path):
        def writer(fh):
            fh.write(f"# radius_px={pixels.radius_px:.9g}\n# image_height_px={pixels.image_height_px:.9g}\n")
            pixels.to_frame().to_csv(fh, index=False, float_format="%.9g")

        self._write(path, writer)

    # matrices with an axis sidecar

    @staticmethod
    def sidecar_path(path: Path) -> Path:
        path = Path(path)
        return path.with_name(path.stem + ".axes.json")

    def save_matrix(self, values: np.ndarray, axes: dict, path: Path):
        self._write(path, lambda fh: np.savetxt(fh, np.asarray(values), delimiter=",", fmt="%.9g"))
        self.save_json({k: np.asarray(v).tolist() for k, v in axes.items()}, self.sidecar_path(path))

    def load_matrix(self, path: Path) -> Tuple[np.ndarray, dict]:
        try:
            values = np.loadtxt(path, delimiter=",", ndmin=2)
            with open(self.sidecar_path(path)) as fh:
                axes = json.load(fh)
        except (OSError, ValueError) as e:
            logger.error(f"Error reading matrix {path}: {e}")
            raise PourInputError(f"cannot read matrix {path} and its axis sidecar: {e}") from e
        return values, {k: np.asarray(v, dtype=float) for k, v in axes.items()}

    def load_difference_map(self, path: Path) -> TemporalDifferenceMap:
        values, axes = self.load_matrix(path)
        if "frame_times" not in axes:
            raise PourInputError(f"axis sidecar of {path} lacks frame_times")
        try:
            return TemporalDifferenceMap(values, axes["frame_times"])
        except DomainError as e:
            raise PourInputError(f"invalid difference map {path}: {e}") from e

    def save_difference_map(self, tdm: TemporalDifferenceMap, path: Path):
        self.save_matrix(tdm.values, {"frame_times": tdm.frame_times}, path)

    def save_spectrogram(self, spec, path: Path):
        """Magnitudes (frames x bins) with frame_times and bin_freqs in the sidecar."""
        self.save_matrix(spec.magnitudes, {"frame_times": spec.frame_times, "bin_freqs": spec.bin_freqs}, path)

    # reports and manifests

    def save_json(self, data: dict, path: Path):
        self._write(path, lambda fh: (json.dump(data, fh, indent=2, sort_keys=True), fh.write("\n")))

    def load_manifest(self, path: Path) -> pd.DataFrame:
        """Manifest rows with audio/truth paths resolved against the manifest's directory."""
        path = Path(path)
        df = self._read_csv(path, ["sample_id", "audio", "truth"], "manifest")
        base = path.parent
        df["audio"] = [str(base / p) for p in df["audio"]]
        df["truth"] = [str(base / p) for p in df["truth"]]
        return df

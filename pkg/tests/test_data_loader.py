import json

import numpy as np
import pandas as pd
import pytest
from scipy.io import wavfile

from src.core import AudioBuffer, ContainerShape, ContainerSpec, PitchTrack, PourInputError, TrackSource
from src.cosup import PixelTrack, TemporalDifferenceMap
from src.data_loader import PourDataLoader
from src.pitch import spectrogram
from tests.conftest import SR, tone


@pytest.fixture
def loader():
    return PourDataLoader()


def test_container_round_trip(loader, tmp_path):
    spec = ContainerSpec(ContainerShape.BOTTLENECK, 0.18, 0.035, neck_length=0.04, neck_radius=0.012)
    path = tmp_path / "bottle.json"
    loader.save_container(spec, path)
    assert json.loads(path.read_text())["neck"]["radius_m"] == 0.012
    assert loader.load_container(path) == spec


@pytest.mark.parametrize("content", ["{not json", "[1, 2]"])
def test_container_rejects_bad_json(loader, tmp_path, content):
    path = tmp_path / "bad.json"
    path.write_text(content)
    with pytest.raises(PourInputError):
        loader.load_container(path)


def test_missing_files_raise_input_error(loader, tmp_path):
    with pytest.raises(PourInputError):
        loader.load_container(tmp_path / "nope.json")
    with pytest.raises(PourInputError):
        loader.load_audio(tmp_path / "nope.wav")
    with pytest.raises(PourInputError):
        loader.load_track(tmp_path / "nope.csv")


def test_audio_round_trip_is_16_bit(loader, tmp_path):
    audio = tone(500.0, seconds=0.5)
    path = tmp_path / "tone.wav"
    loader.save_audio(audio, path)
    rate, data = wavfile.read(path)
    assert rate == SR and data.dtype == np.int16
    back = loader.load_audio(path)
    np.testing.assert_allclose(back.samples, audio.samples, atol=2.0 / 32768)


def test_audio_downmix_and_resample(loader, tmp_path):
    t = np.arange(44100) / 44100
    left = 0.5 * np.sin(2 * np.pi * 300 * t)
    stereo = np.stack([left, left], axis=1).astype(np.float32)
    path = tmp_path / "stereo.wav"
    wavfile.write(path, 44100, stereo)
    audio = loader.load_audio(path)
    assert audio.sample_rate == SR
    assert len(audio.samples) == SR
    spec = spectrogram(audio)
    peak = spec.bin_freqs[np.argmax(spec.magnitudes[10])]
    assert abs(peak - 300.0) <= SR / 1024


def test_audio_accepts_uint8(loader, tmp_path):
    path = tmp_path / "u8.wav"
    wavfile.write(path, SR, np.full(1000, 128, dtype=np.uint8))
    assert np.all(loader.load_audio(path).samples == 0.0)


def test_empty_audio_rejected(loader, tmp_path):
    path = tmp_path / "empty.wav"
    wavfile.write(path, SR, np.zeros(0, dtype=np.int16))
    with pytest.raises(PourInputError):
        loader.load_audio(path)


def test_track_round_trip(loader, tmp_path):
    track = PitchTrack.from_frequencies(np.arange(4) * 0.016, [400.0, np.nan, 420.0, 430.0], [0.3, 0.0, 0.4, 0.5],
                                        TrackSource.ARGMAX, rms=[0.1, 0.0, 0.2, 0.2])
    path = tmp_path / "track.csv"
    loader.save_track(track, path)
    back = loader.load_track(path)
    assert back.source is TrackSource.FITTED
    np.testing.assert_array_equal(back.voiced, track.voiced)
    np.testing.assert_allclose(back.frequencies[back.voiced], [400.0, 420.0, 430.0])
    np.testing.assert_allclose(back.rms, [0.1, 0.0, 0.2, 0.2])


def test_track_without_rms_column(loader, tmp_path):
    path = tmp_path / "track.csv"
    pd.DataFrame({"time_s": [0.0, 0.1], "f_hz": [300.0, 310.0], "lambda_m": [1.14, 1.1],
                  "confidence": [0.5, 0.5], "voiced": [1, 1]}).to_csv(path, index=False)
    assert loader.load_track(path).rms is None


def test_track_missing_columns(loader, tmp_path):
    path = tmp_path / "track.csv"
    pd.DataFrame({"time_s": [0.0], "f_hz": [300.0]}).to_csv(path, index=False)
    with pytest.raises(PourInputError, match="missing columns"):
        loader.load_track(path)


def test_truth_round_trip_sorted(loader, tmp_path):
    table = pd.DataFrame({"t": [1.0, 0.0], "l_m": [0.1, 0.2], "lambda_m": [0.47, 0.87], "f_hz": [730.0, 394.0],
                          "extra": [1, 2]})
    path = tmp_path / "truth.csv"
    loader.save_truth(table, path)
    back = loader.load_truth(path)
    assert list(back.columns) == ["t", "l_m", "lambda_m", "f_hz"]
    assert back["t"].tolist() == [0.0, 1.0]


def test_pixel_track_round_trip(loader, tmp_path):
    pixels = PixelTrack([0.0, 0.5, 1.0], [120.0, 100.0, 80.0], radius_px=18.5, image_height_px=480.0)
    path = tmp_path / "pixels.csv"
    loader.save_pixel_track(pixels, path)
    assert path.read_text().startswith("# radius_px=18.5\n# image_height_px=480\n")
    back = loader.load_pixel_track(path)
    assert back.radius_px == 18.5 and back.image_height_px == 480.0
    np.testing.assert_allclose(back.lengths_px, pixels.lengths_px)


def test_pixel_track_needs_header(loader, tmp_path):
    path = tmp_path / "pixels.csv"
    path.write_text("time_s,l_px\n0.0,10\n")
    with pytest.raises(PourInputError, match="radius_px"):
        loader.load_pixel_track(path)


def test_difference_map_round_trip(loader, tmp_path):
    tdm = TemporalDifferenceMap(np.random.default_rng(0).random((6, 5)), np.arange(6) * 0.04)
    path = tmp_path / "tdm.csv"
    loader.save_difference_map(tdm, path)
    assert loader.sidecar_path(path).name == "tdm.axes.json"
    back = loader.load_difference_map(path)
    np.testing.assert_allclose(back.values, tdm.values, rtol=1e-8)
    np.testing.assert_allclose(back.frame_times, tdm.frame_times)


def test_matrix_without_sidecar(loader, tmp_path):
    path = tmp_path / "m.csv"
    np.savetxt(path, np.ones((2, 2)), delimiter=",")
    with pytest.raises(PourInputError):
        loader.load_matrix(path)


def test_spectrogram_sidecar(loader, tmp_path):
    spec = spectrogram(AudioBuffer(SR, np.zeros(2048)), window_size=256, hop_size=128)
    path = tmp_path / "spec.csv"
    loader.save_spectrogram(spec, path)
    values, axes = loader.load_matrix(path)
    assert values.shape == spec.magnitudes.shape
    assert set(axes) == {"frame_times", "bin_freqs"}


def test_manifest_paths_resolve_against_its_directory(loader, tmp_path):
    sub = tmp_path / "set"
    sub.mkdir()
    pd.DataFrame({"sample_id": ["a"], "audio": ["a.wav"], "truth": ["a_truth.csv"]}).to_csv(sub / "manifest.csv",
                                                                                              index=False)
    manifest = loader.load_manifest(sub / "manifest.csv")
    assert manifest["audio"].iloc[0] == str(sub / "a.wav")


def test_failed_write_leaves_no_partial_file(loader, tmp_path):
    path = tmp_path / "out.json"

    def explode(fh):
        fh.write("{")
        raise OSError("disk full")

    with pytest.raises(PourInputError):
        loader._write(path, explode)
    assert list(tmp_path.iterdir()) == []

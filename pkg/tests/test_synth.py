import numpy as np
import pandas as pd
import pytest

from src.core import ContainerShape, ContainerSpec, DomainError, RadialParams
from src.data_loader import MANIFEST_COLUMNS, PourDataLoader
from src.physics import axial_frequency
from src.pitch import spectrogram
from src.synth import (
    PEAK_LEVEL,
    GroundTruth,
    LoudnessEnvelope,
    SampleRanges,
    SynthConfig,
    sample_container,
    sample_dataset,
    synthesize_pour,
)
from tests.conftest import SR


def test_clean_pour_shape_and_level(clean_pour):
    audio, truth = clean_pour
    assert audio.sample_rate == SR
    assert audio.duration == pytest.approx(10.0)
    assert np.max(np.abs(audio.samples)) == pytest.approx(PEAK_LEVEL)
    assert isinstance(truth, GroundTruth)
    assert list(truth.table.columns) == ["t", "l_m", "lambda_m", "f_hz"]
    assert truth.table["l_m"].iloc[0] == pytest.approx(0.2)
    assert truth.table["l_m"].iloc[-1] == 0.0
    assert truth.measured_snr_db is None
    np.testing.assert_allclose(truth.table["f_hz"] * truth.table["lambda_m"], 343.0)


def test_zero_flow_is_steady_tone(cylinder):
    audio, truth = synthesize_pour(cylinder, 0.0, SynthConfig(n_harmonics=1), duration=1.0)
    spec = spectrogram(audio, window_size=1024)
    peaks = spec.bin_freqs[np.argmax(spec.magnitudes, axis=1)]
    expected = axial_frequency(0.2, 0.03)
    assert np.all(np.abs(peaks[4:-4] - expected) <= SR / 1024)
    assert np.all(truth.table["l_m"] == 0.2)


def test_zero_flow_needs_duration(cylinder):
    with pytest.raises(DomainError):
        synthesize_pour(cylinder, 0.0)


def test_phase_is_continuous(clean_pour):
    # a phase jump would splash energy across the whole spectrum
    audio, _ = clean_pour
    spec = spectrogram(audio, window_size=1024)
    high = spec.bin_freqs > 7000.0
    interior = slice(4, spec.n_frames - 4)
    power = spec.magnitudes[interior] ** 2
    ratio = power[:, high].sum(axis=1) / power.sum(axis=1)
    assert ratio.max() < 1e-4


@pytest.mark.parametrize("snr_db", [20.0, 10.0, 0.0])
def test_noise_matches_requested_snr(cylinder, snr_db):
    flow = cylinder.volume / 6.0
    clean, _ = synthesize_pour(cylinder, flow, SynthConfig(seed=4))
    noisy, truth = synthesize_pour(cylinder, flow, SynthConfig(noise_snr_db=snr_db, seed=4))
    assert truth.measured_snr_db == pytest.approx(snr_db, abs=1.0)

    x, s = noisy.samples, clean.samples
    tonal = s * np.dot(x, s) / np.dot(s, s)
    measured = 10 * np.log10(np.sum(tonal ** 2) / np.sum((x - tonal) ** 2))
    assert measured == pytest.approx(snr_db, abs=1.0)


def test_infinite_snr_means_no_noise():
    assert SynthConfig(noise_snr_db=float("inf")).noise_snr_db is None


def test_synthesis_is_seeded(cylinder):
    flow = cylinder.volume / 6.0
    a, _ = synthesize_pour(cylinder, flow, SynthConfig(noise_snr_db=10.0, seed=1))
    b, _ = synthesize_pour(cylinder, flow, SynthConfig(noise_snr_db=10.0, seed=1))
    c, _ = synthesize_pour(cylinder, flow, SynthConfig(noise_snr_db=10.0, seed=2))
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_odd_harmonics_present(cylinder):
    audio, _ = synthesize_pour(cylinder, 0.0, SynthConfig(n_harmonics=2), duration=1.0)
    spec = spectrogram(audio, window_size=1024, n_fft=4096)
    mean = spec.magnitudes[4:-4].mean(axis=0)
    f0 = axial_frequency(0.2, 0.03)

    def level(f):
        return mean[np.argmin(np.abs(spec.bin_freqs - f))]

    assert level(3 * f0) > 0.2 * level(f0)
    assert level(2 * f0) < 0.01 * level(f0)


def test_radial_mode_needs_parameters():
    with pytest.raises(DomainError):
        SynthConfig(include_radial=True)


def test_radial_mode_adds_a_component(cylinder):
    cfg = SynthConfig(n_harmonics=1, include_radial=True, radial=RadialParams(5000.0, 0.0), radial_gain_db=-6.0)
    audio, _ = synthesize_pour(cylinder, 0.0, cfg, duration=1.0)
    spec = spectrogram(audio, window_size=1024)
    mean = spec.magnitudes[4:-4].mean(axis=0)
    assert mean[np.argmin(np.abs(spec.bin_freqs - 5000.0))] > 0.1 * mean.max()


def test_attack_decay_envelope(cylinder):
    cfg = SynthConfig(n_harmonics=1, loudness_envelope=LoudnessEnvelope.ATTACK_DECAY)
    audio, _ = synthesize_pour(cylinder, cylinder.volume / 5.0, cfg)
    assert abs(audio.samples[0]) < 1e-9
    assert np.abs(audio.samples[:100]).max() < 0.05


@pytest.mark.parametrize("shape", list(ContainerShape))
def test_sample_container_respects_ranges(shape):
    rng = np.random.default_rng(0)
    ranges = SampleRanges()
    for _ in range(20):
        spec, flow = sample_container(rng, ranges, shape)
        assert spec.shape is shape
        assert 0.05 <= spec.height <= 0.25
        assert 0.01 <= spec.radius_base <= 0.05
        assert 6.0 <= spec.volume / flow <= 12.0


def test_sample_ranges_validate():
    with pytest.raises(DomainError):
        SampleRanges(height=(0.2, 0.1))


def test_frustum_and_bottleneck_synthesize():
    frustum = ContainerSpec(ContainerShape.FRUSTUM, 0.15, 0.02, 0.04)
    bottle = ContainerSpec(ContainerShape.BOTTLENECK, 0.15, 0.04, neck_length=0.03, neck_radius=0.01)
    for spec in (frustum, bottle):
        audio, truth = synthesize_pour(spec, spec.volume / 6.0, SynthConfig(n_harmonics=1))
        assert audio.duration == pytest.approx(6.0, abs=1e-3)
        assert np.all(np.diff(truth.table["lambda_m"]) < 0)


def test_sample_dataset_writes_files(tmp_path):
    manifest = sample_dataset(3, config=SynthConfig(noise_snr_db=20.0), seed=5, out_dir=tmp_path,
                              shapes=(ContainerShape.CYLINDER, ContainerShape.FRUSTUM))
    assert list(manifest.columns) == MANIFEST_COLUMNS
    assert manifest["shape"].tolist() == ["cylinder", "frustum", "cylinder"]
    assert (tmp_path / "manifest.csv").exists()
    for row in manifest.itertuples():
        assert (tmp_path / row.audio).exists()
        assert (tmp_path / row.truth).exists()

    loader = PourDataLoader()
    reread = loader.load_manifest(tmp_path / "manifest.csv")
    assert len(reread) == 3
    audio = loader.load_audio(reread["audio"].iloc[0])
    assert audio.duration == pytest.approx(manifest["duration_s"].iloc[0], abs=1e-3)


def test_sample_dataset_is_reproducible(tmp_path):
    a = sample_dataset(2, seed=9, out_dir=tmp_path / "a")
    b = sample_dataset(2, seed=9, out_dir=tmp_path / "b")
    pd.testing.assert_frame_equal(a, b)
    assert (tmp_path / "a" / "sample_00000.wav").read_bytes() == (tmp_path / "b" / "sample_00000.wav").read_bytes()


def test_noisy_pour_never_clips(cylinder):
    audio, _ = synthesize_pour(cylinder, cylinder.volume / 3.0, SynthConfig(noise_snr_db=0.0, seed=11))
    assert np.max(np.abs(audio.samples)) <= 1.0

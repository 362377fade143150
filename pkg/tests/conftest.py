import math

import numpy as np
import pytest

from src.core import AudioBuffer, ContainerSpec, PhysicsConstants
from src.pitch import CurveModel, FittedCurve
from src.synth import SynthConfig, synthesize_pour

SR = 16000


def line_curve(intercept, slope, T):
    """Exact linear wavelength curve on [0, T]."""
    return FittedCurve(CurveModel.LINEAR, np.array([intercept, slope]), np.ones(2, dtype=bool), 0.0, (0.0, T))


def tone(freq, seconds=1.0, amplitude=0.5, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return AudioBuffer(sr, amplitude * np.sin(2 * np.pi * freq * t))


def cylinder_flow(container, T):
    """Volume flow (m^3/s) that fills `container` in T seconds."""
    return container.volume / T


@pytest.fixture
def constants():
    return PhysicsConstants()


@pytest.fixture
def cylinder():
    return ContainerSpec.cylinder(0.2, 0.03)


@pytest.fixture(scope="session")
def clean_pour():
    """Noise-free single-harmonic pour into a 20 cm x 3 cm cylinder over 10 s."""
    container = ContainerSpec.cylinder(0.2, 0.03)
    flow = math.pi * 0.03 ** 2 * 0.2 / 10.0
    audio, truth = synthesize_pour(container, flow, SynthConfig(n_harmonics=1))
    return audio, truth


@pytest.fixture(scope="session")
def realistic_pour():
    """Three-harmonic pour at 20 dB SNR into the same cylinder."""
    container = ContainerSpec.cylinder(0.2, 0.03)
    flow = math.pi * 0.03 ** 2 * 0.2 / 10.0
    audio, truth = synthesize_pour(container, flow, SynthConfig(noise_snr_db=20.0, seed=7))
    return audio, truth

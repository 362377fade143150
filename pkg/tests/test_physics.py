import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from src.core import (
    ContainerShape,
    ContainerSpec,
    DomainError,
    InsufficientDataError,
    NonPhysicalError,
    NoPourDetectedError,
    PhysicsConstants,
    PitchTrack,
    RadialParams,
    ShapeLabel,
)
from src.physics import (
    ML_PER_M3,
    DerivativeMethod,
    EndCorrectionForm,
    TimeToFillConfig,
    axial_frequency,
    bottleneck_wavelength,
    classify_shape,
    fill_profile,
    invert_dimensions,
    invert_flow_rate,
    invert_length,
    radial_frequency,
    time_to_fill,
    wavelength_profile,
)
from src.pitch import SampledCurve
from tests.conftest import line_curve


def test_axial_frequency_closed_pipe():
    f = axial_frequency(0.2, 0.03)
    assert f == pytest.approx(343.0 / (4 * (0.2 + 0.62 * 0.03)))
    assert axial_frequency(0.0, 0.03) == pytest.approx(343.0 / (4 * 0.62 * 0.03))


def test_axial_frequency_vectorised_and_monotone():
    l = np.linspace(0.0, 0.2, 50)
    f = axial_frequency(l, 0.03)
    assert f.shape == l.shape
    assert np.all(np.diff(f) < 0)


def test_axial_frequency_rejects_bad_input():
    with pytest.raises(DomainError):
        axial_frequency(-0.01, 0.03)
    with pytest.raises(DomainError):
        axial_frequency(0.1, 0.0)
    with pytest.raises(DomainError):
        axial_frequency(0.0, 0.03, PhysicsConstants(beta=0.0))


def test_radial_frequency_falls_as_container_fills():
    params = RadialParams(f0=2000.0, xi=1.5)
    assert radial_frequency(0.2, 0.2, params) == pytest.approx(2000.0)
    assert radial_frequency(0.0, 0.2, params) == pytest.approx(2000.0 / math.sqrt(2.5))
    l = np.linspace(0.2, 0.0, 20)
    assert np.all(np.diff(radial_frequency(l, 0.2, params)) < 0)
    with pytest.raises(DomainError):
        radial_frequency(0.3, 0.2, params)


def test_cylinder_fill_profile_is_linear():
    c = ContainerSpec.cylinder(0.2, 0.03)
    Q = c.volume / 10.0
    fp = fill_profile(c, Q)
    assert fp.duration == pytest.approx(10.0)
    assert fp.lengths[0] == 0.2 and fp.lengths[-1] == 0.0
    expected = 0.2 - Q / (math.pi * 0.03 ** 2) * fp.times
    np.testing.assert_allclose(fp.lengths, expected, atol=1e-12)
    assert fp.is_monotone


def test_frustum_fill_matches_ode_integration():
    c = ContainerSpec(ContainerShape.FRUSTUM, 0.2, 0.02, 0.04)
    Q = c.volume / 10.0
    fp = fill_profile(c, Q)
    assert abs(fp.lengths[0] - 0.2) < 1e-9 and abs(fp.lengths[-1]) < 1e-9

    def dl_dt(_, l):
        r = c.radius_at(c.height - l[0])
        return [-Q / (math.pi * r ** 2)]

    idx = np.arange(0, 1000, 50)
    sol = solve_ivp(dl_dt, (0.0, fp.times[idx[-1]]), [0.2], t_eval=fp.times[idx], rtol=1e-11, atol=1e-13)
    assert sol.success
    assert np.max(np.abs(fp.lengths[idx] - sol.y[0])) < 1e-6


def test_fill_profile_rejects_zero_flow():
    with pytest.raises(DomainError):
        fill_profile(ContainerSpec.cylinder(0.2, 0.03), 0.0)


def test_wavelength_profile_cylinder():
    c = ContainerSpec.cylinder(0.2, 0.03)
    fp = fill_profile(c, c.volume / 10.0, n_samples=11)
    lam = wavelength_profile(c, fp)
    assert lam.name == "lambda_m"
    assert lam.iloc[0] == pytest.approx(4 * (0.2 + 0.62 * 0.03))
    assert lam.iloc[-1] == pytest.approx(4 * 0.62 * 0.03)


def test_bottleneck_wavelength_grows_with_air_volume():
    c = ContainerSpec(ContainerShape.BOTTLENECK, 0.2, 0.04, neck_length=0.03, neck_radius=0.01)
    lam = bottleneck_wavelength(np.linspace(0.0, 0.2, 10), c)
    assert np.all(np.diff(lam) > 0)
    with pytest.raises(DomainError):
        bottleneck_wavelength(0.1, ContainerSpec.cylinder(0.2, 0.03))


@settings(max_examples=50, deadline=None)
@given(H=st.floats(min_value=0.05, max_value=0.25), R=st.floats(min_value=0.01, max_value=0.05))
def test_forward_inverse_recovers_dimensions(H, R):
    c = ContainerSpec.cylinder(H, R)
    fp = fill_profile(c, c.volume / 8.0)
    curve = SampledCurve.from_series(wavelength_profile(c, fp))
    H_hat, R_hat = invert_dimensions(curve, fp.duration)
    assert abs(H_hat - H) < 1e-9
    assert abs(R_hat - R) < 1e-9


def test_invert_length_pins_the_end_to_zero():
    curve = line_curve(0.8744, -0.08, 10.0)
    fp = invert_length(curve, 10.0, n_samples=101)
    assert fp.lengths[-1] == 0.0
    assert fp.lengths[0] == pytest.approx(0.2)
    assert fp.clamped == 0


def test_invert_length_clamps_negative_values(caplog):
    # curve still falling after T: l(t > T) < 0
    curve = line_curve(1.0, -0.1, 5.0)
    fp = invert_length(curve, 5.0, times=[0.0, 2.5, 5.0, 6.0])
    assert fp.clamped == 1
    assert fp.lengths[-1] == 0.0
    assert "clamped" in caplog.text


@pytest.mark.parametrize(
    "intercept, slope, beta",
    [(0.3, 0.01, 0.62), (0.3, -0.05, 0.62), (0.8, -0.05, 0.0)],
)
def test_invert_dimensions_non_physical(intercept, slope, beta):
    with pytest.raises(NonPhysicalError):
        invert_dimensions(line_curve(intercept, slope, 10.0), 10.0, PhysicsConstants(beta=beta))


def test_invert_flow_rate_round_trip():
    R = 0.03
    Q = 40.0 / ML_PER_M3
    c = ContainerSpec.cylinder(0.2, R)
    fp = fill_profile(c, Q)
    curve = SampledCurve.from_series(wavelength_profile(c, fp))
    flow = invert_flow_rate(curve, R, np.linspace(1.0, fp.duration - 1.0, 25))
    assert flow.name == "flow_ml_s"
    np.testing.assert_allclose(flow.to_numpy(), 40.0, rtol=1e-6)


@given(
    T=st.floats(min_value=4.0, max_value=15.0),
    fraction=st.sampled_from([0.25, 0.5, 0.75]),
    H=st.floats(min_value=0.05, max_value=0.25),
    R=st.floats(min_value=0.01, max_value=0.05),
)
def test_time_to_fill_exact_on_noiseless_line(T, fraction, H, R):
    beta = 0.62
    curve = line_curve(4 * (H + beta * R), -4 * H / T, T)
    t_cut = fraction * T
    tau = time_to_fill(curve, t_cut, R_estimate=R)
    assert abs(tau - (T - t_cut)) < 1e-6


def test_time_to_fill_printed_form_differs():
    curve = line_curve(4 * (0.2 + 0.62 * 0.03), -0.08, 10.0)
    cfg = TimeToFillConfig(end_correction_form=EndCorrectionForm.PRINTED)
    tau = time_to_fill(curve, 5.0, cfg, R_estimate=0.03)
    exact = time_to_fill(curve, 5.0, R_estimate=0.03)
    assert exact == pytest.approx(5.0)
    assert tau == pytest.approx(5.0 + 3 * 0.62 * 0.03 / 0.08)


def test_time_to_fill_without_radius_overestimates():
    curve = line_curve(4 * (0.2 + 0.62 * 0.03), -0.08, 10.0)
    assert time_to_fill(curve, 5.0) > time_to_fill(curve, 5.0, R_estimate=0.03)


def test_time_to_fill_rejects_rising_wavelength():
    with pytest.raises(NoPourDetectedError):
        time_to_fill(line_curve(0.3, 0.01, 10.0), 5.0)


def test_time_to_fill_rejects_cut_inside_early_window():
    with pytest.raises(InsufficientDataError):
        time_to_fill(line_curve(0.8, -0.08, 10.0), 0.2)


@pytest.mark.parametrize("method", list(DerivativeMethod))
def test_time_to_fill_from_track(method):
    times = np.arange(0, 10.0, 0.016)
    lam = 4 * (0.2 + 0.62 * 0.03) - 0.08 * times
    track = PitchTrack.from_wavelengths(times, lam)
    cfg = TimeToFillConfig(derivative_method=method)
    tau = time_to_fill(track, 5.0, cfg, R_estimate=0.03)
    assert tau == pytest.approx(5.0, abs=1e-3)


def _track_from(container, T=8.0, frame=0.016):
    fp = fill_profile(container, container.volume / T)
    lam = wavelength_profile(container, fp)
    times = np.arange(0.0, fp.duration, frame)
    return PitchTrack.from_wavelengths(times, np.interp(times, lam.index, lam.to_numpy())), fp.duration


@pytest.mark.parametrize(
    "container, label",
    [
        (ContainerSpec.cylinder(0.2, 0.03), ShapeLabel.CYLINDRICAL),
        (ContainerSpec(ContainerShape.BOTTLENECK, 0.2, 0.04, neck_length=0.03, neck_radius=0.01), ShapeLabel.BOTTLENECK),
        (ContainerSpec(ContainerShape.FRUSTUM, 0.2, 0.02, 0.04), ShapeLabel.SEMICONICAL),
    ],
)
def test_classify_shape_on_exact_profiles(container, label):
    track, T = _track_from(container)
    result = classify_shape(track, T)
    assert result.label is label
    assert set(result.to_frame()["shape"]) == {s.value for s in ShapeLabel}


def test_classify_shape_needs_frames():
    track = PitchTrack.from_wavelengths(np.arange(5) * 0.1, np.linspace(1.0, 0.5, 5))
    with pytest.raises(InsufficientDataError):
        classify_shape(track, 0.5)


@given(
    l1=st.floats(min_value=0.0, max_value=0.3),
    l2=st.floats(min_value=0.0, max_value=0.3),
    R=st.floats(min_value=0.005, max_value=0.06),
)
def test_axial_frequency_strictly_decreasing(l1, l2, R):
    lo, hi = sorted((l1, l2))
    if hi - lo < 1e-9:
        return
    assert axial_frequency(lo, R) > axial_frequency(hi, R)


@given(
    f0=st.floats(min_value=1.0, max_value=20000.0),
    xi=st.floats(min_value=0.0, max_value=100.0),
    H=st.floats(min_value=0.01, max_value=1.0),
)
def test_radial_frequency_empty_container_is_f0(f0, xi, H):
    assert radial_frequency(H, H, RadialParams(f0, xi)) == f0


@settings(max_examples=30, deadline=None)
@given(H=st.floats(min_value=0.05, max_value=0.25), R=st.floats(min_value=0.01, max_value=0.05))
def test_cylinder_wavelength_is_affine_in_time(H, R):
    c = ContainerSpec.cylinder(H, R)
    lam = wavelength_profile(c, fill_profile(c, c.volume / 7.0))
    t = lam.index.to_numpy()
    secant = lam.iloc[0] + (lam.iloc[-1] - lam.iloc[0]) * t / t[-1]
    assert np.max(np.abs(lam.to_numpy() - secant)) < 1e-9


def test_axial_frequency_monotone_over_ten_thousand_draws():
    rng = np.random.default_rng(0)
    for R in rng.uniform(0.005, 0.06, 100):
        l = np.sort(rng.uniform(0.0, 0.3, 100))
        l = l[np.diff(l, prepend=-1.0) > 1e-9]
        assert np.all(np.diff(axial_frequency(l, R)) < 0)


def test_equal_radius_frustum_matches_cylinder():
    frustum = ContainerSpec(ContainerShape.FRUSTUM, 0.2, 0.03, 0.03)
    cylinder = ContainerSpec.cylinder(0.2, 0.03)
    Q = cylinder.volume / 10.0
    a, b = fill_profile(frustum, Q), fill_profile(cylinder, Q)
    np.testing.assert_allclose(a.times, b.times, atol=1e-9)
    np.testing.assert_allclose(a.lengths, b.lengths, atol=1e-9)


def _two_rate_track():
    # flow doubles after the first second
    times = np.arange(0.0, 10.0, 0.016)
    lam = np.where(times <= 1.0, 0.9 - 0.08 * times, 0.82 - 0.16 * (times - 1.0))
    return PitchTrack.from_wavelengths(times, lam)


@pytest.mark.parametrize("method", [DerivativeMethod.EARLY_RANSAC, DerivativeMethod.LOCAL_REGRESSION])
def test_early_window_methods_ignore_later_frames(method):
    cfg = TimeToFillConfig(early_window_delta=0.5, derivative_method=method)
    # 0.9 - 0.08 * 0.25 = 0.88 at t' = 0.25, gone in 11 s, 6.25 s after the cut
    assert time_to_fill(_two_rate_track(), 5.0, cfg) == pytest.approx(6.25, abs=1e-6)


def test_ransac_slope_uses_the_whole_prefix():
    cfg = TimeToFillConfig(early_window_delta=0.5, derivative_method=DerivativeMethod.RANSAC_SLOPE)
    # the faster segment holds most frames before the cut: 0.98 - 0.16 t
    assert time_to_fill(_two_rate_track(), 5.0, cfg) == pytest.approx(0.94 / 0.16 - 4.75, abs=0.1)

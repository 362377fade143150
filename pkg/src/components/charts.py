import plotly.graph_objects as go
import plotly.express as px
import numpy as np
import pandas as pd


def plot_spectrogram(spec, track=None, max_freq=6000.0):
    """Plot the spectrogram in dB with the tracked pitch on top."""
    keep = spec.bin_freqs <= max_freq
    db = 20 * np.log10(spec.magnitudes[:, keep].T + 1e-9)

    fig = go.Figure()
    fig.add_trace(go.Heatmap(x=spec.frame_times, y=spec.bin_freqs[keep], z=db, colorscale='Viridis',
                             colorbar=dict(title='dB'), name='Magnitude'))
    if track is not None:
        fig.add_trace(go.Scatter(x=track.times, y=track.frequencies, mode='lines', name='Pitch',
                                 line=dict(color='#d62728', width=2)))

    fig.update_layout(
        title="Spectrogram and Pitch Track",
        xaxis_title="Time (s)",
        yaxis_title="Frequency (Hz)",
        template="plotly_white",
        height=450,
        margin=dict(l=20, r=20, t=40, b=20)
    )
    return fig


def plot_wavelength_fit(track, curve):
    """Plot per-frame wavelengths, the fitted curve and the RANSAC inliers."""
    fig = go.Figure()
    voiced = track.voiced
    inliers = curve.inlier_mask & voiced
    fig.add_trace(go.Scatter(x=track.times[voiced & ~inliers], y=track.wavelengths[voiced & ~inliers] * 100,
                             mode='markers', name='Outliers', marker=dict(color='#7f7f7f', size=4)))
    fig.add_trace(go.Scatter(x=track.times[inliers], y=track.wavelengths[inliers] * 100,
                             mode='markers', name='Inliers', marker=dict(color='#1f77b4', size=4)))

    t = np.linspace(curve.domain[0], curve.domain[1], 200)
    fig.add_trace(go.Scatter(x=t, y=np.asarray(curve.evaluate(t)) * 100, mode='lines',
                             name=f'{curve.model.value} fit', line=dict(color='#d62728', width=2)))

    fig.update_layout(
        title="Wavelength over Time",
        xaxis_title="Time (s)",
        yaxis_title="Wavelength (cm)",
        template="plotly_white",
        hovermode='x unified',
        height=400
    )
    return fig


def plot_air_column(estimate, truth=None):
    """Plot the recovered air column, and the ground truth when known."""
    air = estimate.air_column.to_series() * 100
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=air.index, y=air.values, fill='tozeroy', name='Estimated',
                             line=dict(color='#1f77b4', width=2)))
    if truth is not None:
        fig.add_trace(go.Scatter(x=truth['t'], y=truth['l_m'] * 100, name='Ground truth',
                                 line=dict(width=2, dash='dash', color='#2ca02c')))

    fig.update_layout(
        title=f"Air Column (H = {estimate.height * 100:.1f} cm, R = {estimate.radius * 100:.2f} cm)",
        xaxis_title="Time (s)",
        yaxis_title="Length (cm)",
        template="plotly_white",
        height=400
    )
    return fig


def plot_eval_errors(records: pd.DataFrame):
    """Plot the distribution of air-column errors per noise level."""
    ok = records[records['status'] == 'ok']
    fig = px.box(ok, x='snr_db', y='l_mae_cm', points='all', title="Air-Column MAE by SNR",
                 labels={'snr_db': 'SNR (dB)', 'l_mae_cm': 'MAE (cm)'},
                 color_discrete_sequence=['#1f77b4'])
    fig.add_hline(y=0.5, line_dash="dash", line_color="red")
    fig.update_layout(template="plotly_white", height=400)
    return fig


def plot_time_to_fill(aggregates, cuts=(25, 50, 75)):
    """Plot time-to-fill MAE at each cut, one bar group per noise level."""
    fig = go.Figure()
    for snr, agg in sorted(aggregates.items()):
        values = [agg.get(f'tau_abs_err_{c}_s', np.nan) for c in cuts]
        fig.add_trace(go.Bar(x=[f'{c}%' for c in cuts], y=values, name=f'{snr} dB'))

    fig.update_layout(
        title="Time-to-Fill MAE by Cut",
        xaxis_title="Recording cut",
        yaxis_title="MAE (s)",
        barmode='group',
        template="plotly_white",
        height=400
    )
    return fig

"""Command-line surface: synth, analyze, eval, classify, scale, dataset.

Exit codes: 0 success, 2 input error, 3 analysis failure.
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import pandas as pd

from src.analytics import AnalysisConfig, PourAnalytics, TrackerKind
from src.core import (
    ContainerShape,
    DomainError,
    InsufficientDataError,
    NonPhysicalError,
    PhysicsConstants,
    PourInputError,
    RadialParams,
)
from src.cosup import PLAUSIBLE_ALPHA, estimate_scale
from src.data_loader import PourDataLoader
from src.physics import ML_PER_M3
from src.pitch import CurveModel, SampledCurve
from src.synth import SampleRanges, SynthConfig, sample_dataset, synthesize_pour

logger = logging.getLogger("pour_cli")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ANALYSIS = 3


def _snr(value: str):
    if value.lower() in ("inf", "none", "off"):
        return None
    return float(value)


def _add_globals(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(0), help="Seed for every random draw.")
    parser.add_argument("--sample-rate", type=int, default=default(16000), help="Working sample rate (Hz).")
    parser.add_argument("--beta", type=float, default=default(0.62), help="End-correction factor.")
    parser.add_argument("--speed-of-sound", type=float, default=default(343.0), help="Speed of sound (m/s).")
    parser.add_argument("--out", type=Path, default=default(None), help="Output file or directory.")
    parser.add_argument("-v", "--verbose", action="count", default=default(0), help="-v info, -vv debug.")


def _add_analysis_flags(parser):
    parser.add_argument("--tracker", choices=[t.value for t in TrackerKind], default="argmax")
    parser.add_argument("--model", choices=[m.value for m in CurveModel], default="linear")
    parser.add_argument("--window", type=int, default=1024, help="STFT window (samples).")
    parser.add_argument("--hop", type=int, default=256, help="Hop (samples).")
    parser.add_argument("--early-window", type=float, default=0.5, help="Time-to-fill early window (s).")
    parser.add_argument("--derivative", choices=["ransac_slope", "early_ransac", "local_regression"], default="ransac_slope")
    parser.add_argument("--end-correction", choices=["consistent", "printed"], default="consistent")
    parser.add_argument("--html", action="store_true", help="Also write plotly figures as HTML.")


def build_parser():
    parser = argparse.ArgumentParser(prog="pour_cli", description="Acoustics of pouring liquids.")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Render a pour into a container.")
    _add_globals(p, suppress=True)
    p.add_argument("spec", type=Path, help="Container spec (JSON).")
    p.add_argument("--flow", type=float, required=True, help="Flow rate (ml/s); 0 renders a steady tone.")
    p.add_argument("--duration", type=float, help="Duration (s) of a zero-flow render.")
    p.add_argument("--harmonics", type=int, default=3, help="Number of odd-harmonic components.")
    p.add_argument("--rolloff", type=float, default=0.5)
    p.add_argument("--snr", type=_snr, default=None, help="Noise SNR in dB (inf for none).")
    p.add_argument("--envelope", choices=["constant", "attack_decay"], default="constant")
    p.add_argument("--radial-f0", type=float, help="Radial wall-mode frequency (Hz) of the empty container.")
    p.add_argument("--radial-xi", type=float, default=0.0)
    p.add_argument("--radial-gain-db", type=float, default=-12.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="Track pitch and recover container and pour properties.")
    _add_globals(p, suppress=True)
    p.add_argument("audio", type=Path)
    p.add_argument("--cut", type=float, action="append", default=[], help="Cut fraction for time to fill.")
    _add_analysis_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("eval", help="Round-trip evaluation on synthetic or listed recordings.")
    _add_globals(p, suppress=True)
    p.add_argument("--n", type=int, default=100, help="Number of sampled containers.")
    p.add_argument("--snr", type=_snr, action="append", help="SNR level(s) in dB; default inf, 20, 10.")
    p.add_argument("--shape", choices=[s.value for s in ContainerShape], default="cylinder")
    p.add_argument("--manifest", type=Path, help="Evaluate the recordings listed in this manifest instead.")
    _add_analysis_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", help="Classify the container shape of a recording.")
    _add_globals(p, suppress=True)
    p.add_argument("audio", type=Path, nargs="?")
    p.add_argument("--study", type=int, help="Instead classify this many synthetic pours per shape.")
    p.add_argument("--snr", type=_snr, default=20.0, help="SNR of the synthetic study.")
    p.add_argument("--tracker", choices=[t.value for t in TrackerKind], default="argmax")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("scale", help="Estimate the pixel-to-metric scale factor.")
    _add_globals(p, suppress=True)
    p.add_argument("track", type=Path, help="Pitch track CSV (optional rms column).")
    p.add_argument("pixels", type=Path, help="Pixel track CSV.")
    p.add_argument("--plausible", type=float, nargs=2, default=list(PLAUSIBLE_ALPHA), metavar=("LOW", "HIGH"))
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("dataset", help="Write a seeded synthetic dataset with a manifest.")
    _add_globals(p, suppress=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--snr", type=_snr, default=None)
    p.add_argument("--shape", choices=[s.value for s in ContainerShape], action="append")
    p.add_argument("--harmonics", type=int, default=3)
    p.set_defaults(func=cmd_dataset)
    return parser


def _constants(args):
    return PhysicsConstants(speed_of_sound=args.speed_of_sound, beta=args.beta)


def _analytics(args, constants):
    config = AnalysisConfig(
        tracker=getattr(args, "tracker", "argmax"),
        model=getattr(args, "model", "linear"),
        window_size=getattr(args, "window", 1024),
        hop_size=getattr(args, "hop", 256),
        n_fft=max(4096, getattr(args, "window", 1024)),
        seed=args.seed,
    )
    if hasattr(args, "early_window"):
        config = replace(config, time_to_fill=replace(config.time_to_fill, early_window_delta=args.early_window,
                                                      derivative_method=args.derivative,
                                                      end_correction_form=args.end_correction))
    return PourAnalytics(constants, config)


def cmd_synth(args) -> int:
    constants = _constants(args)
    loader = PourDataLoader(args.sample_rate, constants)
    container = loader.load_container(args.spec)
    radial = RadialParams(args.radial_f0, args.radial_xi) if args.radial_f0 else None
    config = SynthConfig(sample_rate=args.sample_rate, n_harmonics=args.harmonics, harmonic_rolloff=args.rolloff,
                         include_radial=radial is not None, radial=radial, radial_gain_db=args.radial_gain_db,
                         noise_snr_db=args.snr, loudness_envelope=args.envelope, seed=args.seed)
    audio, truth = synthesize_pour(container, args.flow / ML_PER_M3, config, constants, duration=args.duration)

    out = args.out or Path("pour.wav")
    truth_path = out.with_name(out.stem + "_truth.csv")
    loader.save_audio(audio, out)
    loader.save_truth(truth.table, truth_path)
    print(f"wrote {out} ({audio.duration:.2f} s) and {truth_path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    constants = _constants(args)
    loader = PourDataLoader(args.sample_rate, constants)
    analytics = _analytics(args, constants)
    audio = loader.load_audio(args.audio)
    track, curve, estimate = analytics.analyze(audio, cuts=args.cut)

    out = loader.ensure_dir(args.out or Path("analysis"))
    loader.save_track(track, out / "track.csv")
    loader.save_json(estimate.to_report(), out / "report.json")
    spec = analytics.spectrogram(audio)
    loader.save_spectrogram(spec, out / "spectrogram.csv")
    overlay = pd.DataFrame({
        "t": estimate.air_column.times,
        "lambda_fit_m": curve.evaluate(estimate.air_column.times),
        "l_est_m": estimate.air_column.lengths,
        "flow_ml_s": estimate.flow_rate.to_numpy(),
    })
    loader.save_table(overlay, out / "overlay.csv")
    if args.html:
        from src.components import charts
        charts.plot_spectrogram(spec, track).write_html(out / "spectrogram.html")
        charts.plot_wavelength_fit(track, curve).write_html(out / "wavelength.html")
        charts.plot_air_column(estimate).write_html(out / "air_column.html")

    report = estimate.to_report()
    print(f"height {report['height_cm']:.2f} cm, radius {report['radius_cm']:.2f} cm, "
          f"flow {report['flow_rate_ml_s']:.1f} ml/s")
    for cut, tau in report["time_to_fill_s"].items():
        print(f"time to fill at {float(cut):.0%}: {tau:.2f} s")
    return EXIT_OK


def cmd_eval(args) -> int:
    constants = _constants(args)
    loader = PourDataLoader(args.sample_rate, constants)
    analytics = _analytics(args, constants)
    if args.manifest:
        report = analytics.evaluate_manifest(loader.load_manifest(args.manifest), loader)
    else:
        snrs = args.snr if args.snr else [None, 20.0, 10.0]
        report = analytics.evaluate(args.n, SampleRanges(), snrs, args.seed,
                                    SynthConfig(sample_rate=args.sample_rate), args.shape)

    out = loader.ensure_dir(args.out or Path("eval"))
    loader.save_json(report.to_dict(), out / "report.json")
    loader.save_table(report.records, out / "records.csv")
    if args.html:
        from src.components import charts
        charts.plot_eval_errors(report.records).write_html(out / "errors.html")
        charts.plot_time_to_fill(report.aggregates).write_html(out / "time_to_fill.html")
    for line in report.summary_lines():
        print(line)
    return EXIT_OK


def cmd_classify(args) -> int:
    constants = _constants(args)
    analytics = _analytics(args, constants)
    if args.study:
        results = analytics.evaluate_shapes(args.study, snr_db=args.snr, seed=args.seed,
                                            synth_config=SynthConfig(sample_rate=args.sample_rate))
        accuracy = float((results["true"] == results["predicted"]).mean())
        print(pd.crosstab(results["true"], results["predicted"]).to_string())
        print(f"accuracy {accuracy:.2%}")
        if args.out:
            PourDataLoader(args.sample_rate, constants).save_table(results, args.out)
        return EXIT_OK
    if args.audio is None:
        raise PourInputError("classify needs an audio file or --study")

    audio = PourDataLoader(args.sample_rate, constants).load_audio(args.audio)
    result = analytics.classify(audio)
    print(result.label.value)
    print(result.to_frame().to_string(index=False))
    return EXIT_OK


def cmd_scale(args) -> int:
    constants = _constants(args)
    loader = PourDataLoader(args.sample_rate, constants)
    track = loader.load_track(args.track)
    pixels = loader.load_pixel_track(args.pixels)
    voiced = track.voiced
    if voiced.sum() < 2:
        raise InsufficientDataError("pitch track has fewer than two voiced frames")
    curve = SampledCurve(track.times[voiced], track.wavelengths[voiced])
    rms = None
    if track.rms is None:
        logger.warning("pitch track has no rms column, weighting frames uniformly")
    else:
        rms = pd.Series(track.rms[voiced], index=track.times[voiced])
    estimate = estimate_scale(curve, pixels, rms, constants, tuple(args.plausible))

    print(f"alpha {estimate.alpha:.6f} over {len(estimate.ratios)} frames")
    if not estimate.in_range:
        print(f"warning: alpha outside the plausible range [{args.plausible[0]:g}, {args.plausible[1]:g}]")
    if args.out:
        loader.save_json(estimate.to_report(), args.out)
    return EXIT_OK


def cmd_dataset(args) -> int:
    constants = _constants(args)
    loader = PourDataLoader(args.sample_rate, constants)
    shapes = [ContainerShape(s) for s in (args.shape or ["cylinder"])]
    config = SynthConfig(sample_rate=args.sample_rate, n_harmonics=args.harmonics, noise_snr_db=args.snr)
    manifest = sample_dataset(args.n, SampleRanges(), config, args.seed, args.out or Path("dataset"), constants,
                              shapes, loader)
    print(f"wrote {len(manifest)} samples to {args.out or Path('dataset')}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (PourInputError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (InsufficientDataError, NonPhysicalError) as e:
        print(f"analysis failed: {e}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())

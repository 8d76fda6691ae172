#!/usr/bin/env python3
"""
Emitter coherence toolkit: command-line entry point

Usage:
    coherence simulate-g2 --omega-hz 300e6 --gamma-c-hz 20e6
    coherence simulate-pulse --omega-hz 200e6 --duration-s 10e-9
    coherence simulate-stream --omega-hz 200e6 --duration-s 1 --seed 7
    coherence correlate results/simulate-stream.tags --max-tau-s 20e-9
    coherence fit-g2 histogram.csv --sigma-fwhm-hz 100e6
    coherence fit-linewidth single_scan.csv --model logistic
    coherence fit-linewidth scans.csv --ple --temperature 5
    coherence fit-saturation saturation.csv
    coherence diffusion-rate --ul 890e6 --ftl 109e6 --single 112e6
    coherence gap-closing --down gap.csv --up halfwidth.csv
    coherence classify p5K.csv p20K.csv --temperature 5 20
    coherence report results/*.json

Every command writes ``<command>.json`` (a result envelope) to the output
directory, plus CSV plot data where the result is a curve.

Exit status: 0 success, 1 invalid input or usage, 2 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

import data_io
from bloch_dynamics import (
    PulseEnvelope, PulseShape, emission_rate, lambda_pair, pi_half_pulse_duration,
    pi_pulse_duration, pulse_envelope_rates, pulse_train_trace,
)
from config_manager import Config, load_config
from emitter_types import (
    CoherenceError, DetuningDistribution, EmitterParams, InvalidParameterError,
    NumericalError, to_angular, to_ordinary,
)
from export_manager import (
    ResultEnvelope, export_plot_csv, export_plot_svg, export_to_json, export_to_markdown, make_envelope,
)
from fit_engine import fit_g2, fit_model, histogram_line_fit, select_line_shape
from linewidth_models import (
    LogisticLinewidthModel, diffusion_rate, ftl_crossing_temperature, gap_closing_grid, gap_closing_range,
)
from photon_simulator import DiffusionKind, DiffusionProcess, correlate, simulate_stream, simulate_trajectories
from regime_classifier import classify, coherence_temperature_bracket
from spectral_diffusion import CorrelationKernel, contrast_reduction, g2_diffused

logger = logging.getLogger("coherence.cli")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2

LINEWIDTH_MODELS = ("boltzmann", "cubic", "logistic")


class CoherenceArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1, like every other invalid input."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# ============================================================
# OUTPUT HELPERS
# ============================================================

class Run:
    """Output directory, configuration and artifact bookkeeping for one command."""

    def __init__(self, command: str, config: Config, output_dir: Path, svg: bool = False):
        self.command = command
        self.config = config
        self.output_dir = output_dir
        self.svg = svg
        self.artifacts: List[str] = []
        output_dir.mkdir(parents=True, exist_ok=True)

    def write_text(self, name: str, text: str) -> Path:
        path = self.output_dir / name
        path.write_text(text, encoding="utf-8")
        self.artifacts.append(name)
        return path

    def register(self, path: Path) -> None:
        self.artifacts.append(path.name)

    def plot(self, name: str, x, y, band_lo=None, band_hi=None, *, xlabel: str = "x", ylabel: str = "y") -> None:
        self.write_text(f"{name}.csv", export_plot_csv(x, y, band_lo, band_hi))
        if self.svg:
            svg = export_plot_svg(x, y, band_lo, band_hi, xlabel=xlabel, ylabel=ylabel, title=name)
            self.write_text(f"{name}.svg", svg)

    def finish(self, inputs: Dict[str, Any], result: Any) -> ResultEnvelope:
        inputs = {**inputs, "config": self.config.model_dump(mode="json", exclude={"output_dir"})}
        envelope = make_envelope(self.command, inputs, result, self.artifacts + [f"{self.command}.json"])
        (self.output_dir / f"{self.command}.json").write_text(export_to_json(envelope), encoding="utf-8")
        logger.info("%s: wrote %d artifact(s) to %s", self.command, len(envelope.artifacts), self.output_dir)
        return envelope


def _emitter(args: argparse.Namespace, config: Config) -> EmitterParams:
    return EmitterParams(
        gamma=config.decay_rate(),
        gamma_c=to_angular(args.gamma_c_hz),
        omega=to_angular(args.omega_hz),
        delta=to_angular(args.delta_hz),
    )


def _distribution(args: argparse.Namespace) -> DetuningDistribution:
    if args.sigma_fwhm_hz <= 0:
        return DetuningDistribution(sigma=0.0)
    return DetuningDistribution.from_fwhm_hz(args.sigma_fwhm_hz)


def _inputs(args: argparse.Namespace) -> Dict[str, Any]:
    skip = {"handler", "verbose", "quiet", "config", "output_dir", "svg", "command"}
    values = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        if isinstance(value, Path):
            value = value.name
        elif isinstance(value, list):
            value = [v.name if isinstance(v, Path) else v for v in value]
        values[key] = value
    return values


# ============================================================
# COMMANDS
# ============================================================

def cmd_simulate_g2(args, run: Run) -> Dict[str, Any]:
    params = _emitter(args, run.config)
    dist = _distribution(args)
    quad = run.config.quadrature()
    tau = np.linspace(-args.tau_max_s, args.tau_max_s, args.points)
    g2 = g2_diffused(params, dist, tau, quad, kernel=args.kernel)
    run.plot("simulate-g2", tau, g2, xlabel="tau (s)", ylabel="g2")
    pair = lambda_pair(params)
    return {
        "emitter": params.to_dict(),
        "sigma_rad_s": dist.sigma,
        "lambda": pair.to_dict(),
        "regime": pair.regime.value,
        "g2_at_zero": float(g2_diffused(params, dist, 0.0, quad, kernel=args.kernel)),
        "contrast_reduction": contrast_reduction(params, dist, quad, kernel=args.kernel),
    }


def cmd_simulate_pulse(args, run: Run) -> Dict[str, Any]:
    params = _emitter(args, run.config)
    envelope = PulseEnvelope(duration=args.duration_s, rise_time=args.rise_time_s, shape=args.shape)
    bin_width = args.bin_width_s or run.config.bin_width_s
    centers, intensity = pulse_train_trace(
        params, envelope, args.period_s, bin_width, rtol=run.config.ode_rtol, atol=run.config.ode_atol,
    )
    run.plot("simulate-pulse", centers, intensity, xlabel="t (s)", ylabel="photons/s")
    result: Dict[str, Any] = {
        "emitter": params.to_dict(),
        "steady_state_emission_rate_hz": emission_rate(params),
        "envelope_rates": pulse_envelope_rates(params),
        "peak_intensity_hz": float(np.max(intensity)),
        "photons_per_pulse": float(np.sum(intensity) * bin_width),
    }
    if params.omega > 0:
        result["pi_pulse_s"] = pi_pulse_duration(params.omega)
        result["pi_half_pulse_s"] = pi_half_pulse_duration(params.omega)

    if args.trajectories:
        seed = run.config.require_seed(args.seed)
        t_grid = np.linspace(0.0, args.trajectory_window_s, args.points)
        ensemble = simulate_trajectories(params, envelope, t_grid, args.trajectories, seed, workers=args.workers)
        spread = run.config.sigma_level * ensemble.stderr
        run.plot("simulate-pulse-trajectories", ensemble.t, ensemble.rho_ee,
                 ensemble.rho_ee - spread, ensemble.rho_ee + spread, xlabel="t (s)", ylabel="rho_ee")
        result["trajectories"] = {"count": ensemble.n_trajectories, "seed": seed,
                                  "final_rho_ee": float(ensemble.rho_ee[-1]),
                                  "final_rho_ee_stderr": float(ensemble.stderr[-1])}
    return result


def cmd_simulate_stream(args, run: Run) -> Dict[str, Any]:
    params = _emitter(args, run.config)
    seed = run.config.require_seed(args.seed)
    dist = _distribution(args)
    proc = DiffusionProcess(
        kind=args.diffusion,
        sigma=dist.sigma,
        jump_rate=args.jump_rate_hz,
        seed=seed,
        epoch_duration=args.epoch_s,
    )
    stream = simulate_stream(params, proc, args.duration_s, args.efficiency, background_rate=args.background_rate_hz)
    suffix = "tags" if args.format == "binary" else "csv"
    run.register(data_io.write_time_tags(stream, run.output_dir / f"simulate-stream.{suffix}", args.format))
    return {"emitter": params.to_dict(), "stream": stream.to_dict(), "rate_stderr_hz": stream.rate_stderr}


def cmd_correlate(args, run: Run) -> Dict[str, Any]:
    stream = data_io.read_time_tags(args.tags, args.total_duration_s)
    bin_width = args.bin_width_s or run.config.bin_width_s
    curve = correlate(stream, bin_width, args.max_tau_s)
    run.register(data_io.write_correlation_csv(curve, run.output_dir / "correlate-histogram.csv"))
    sigma = curve.g2_sigma
    run.plot("correlate", curve.tau_bins, curve.g2, curve.g2 - sigma, curve.g2 + sigma,
             xlabel="tau (s)", ylabel="g2")
    zero = int(np.argmin(np.abs(curve.tau_bins)))
    return {
        "stream": stream.to_dict(),
        "histogram": curve.to_dict(),
        "g2_at_zero": float(curve.g2[zero]),
        "g2_at_zero_sigma": float(sigma[zero]),
    }


def cmd_fit_g2(args, run: Run) -> Dict[str, Any]:
    curve = data_io.load_correlation_csv(args.histogram)
    gamma = run.config.decay_rate()
    fixed = {"gamma": gamma, "sigma": _distribution(args).sigma}
    guess = {}
    if args.guess_omega_hz:
        guess["omega"] = to_angular(args.guess_omega_hz)
    if args.guess_gamma_c_hz:
        guess["gamma_c"] = to_angular(args.guess_gamma_c_hz)
    result = fit_g2(curve, fixed, guess, quad=run.config.quadrature(), kernel=args.kernel,
                    sigma_level=run.config.sigma_level, **run.config.solver_options())
    y, lo, hi = result.fit.band(curve.tau_bins)
    run.plot("fit-g2", curve.tau_bins, y, lo, hi, xlabel="tau (s)", ylabel="g2")
    return result.to_dict()


def cmd_fit_linewidth(args, run: Run) -> Dict[str, Any]:
    if args.ple:
        if args.temperature is None and args.shape is None:
            raise InvalidParameterError("--ple needs --temperature or --shape to choose the line shape")
        shape = args.shape or select_line_shape(args.temperature)
        summary = histogram_line_fit(data_io.load_ple_scans(args.data), shape, run.config.sigma_level)
        x = summary.inhomogeneous.confidence_bands["x"]
        y, lo, hi = summary.inhomogeneous.band(x)
        run.plot("fit-linewidth", x, y, lo, hi, xlabel="frequency (Hz)", ylabel="summed counts")
        return summary.to_dict()

    data = data_io.load_xy_csv(args.data)
    result = fit_model(args.model, data.x, data.y, data.sigma, sigma_level=run.config.sigma_level,
                       **run.config.solver_options())
    grid = np.linspace(float(np.min(data.x)), float(np.max(data.x)), args.points)
    y, lo, hi = result.band(grid)
    run.plot("fit-linewidth", grid, y, lo, hi, xlabel=data.x_name, ylabel=data.y_name)
    summary = {"fit": result.to_dict()}
    if args.model == "logistic" and args.crossing_hz:
        model = LogisticLinewidthModel(**{n: result.value(n) for n in ("A", "D", "B", "C", "E")})
        summary["crossing_temperature_k"] = ftl_crossing_temperature(model, args.crossing_hz)
    return summary


def cmd_fit_saturation(args, run: Run) -> Dict[str, Any]:
    data = data_io.load_xy_csv(args.data)
    result = fit_model("saturation", data.x, data.y, data.sigma, sigma_level=run.config.sigma_level,
                       **run.config.solver_options())
    grid = np.linspace(0.0, float(np.max(data.x)), args.points)
    y, lo, hi = result.band(grid)
    run.plot("fit-saturation", grid, y, lo, hi, xlabel="power (W)", ylabel="counts/s")
    return {
        "fit": result.to_dict(),
        "I_inf": result.value("I_inf"),
        "I_inf_sigma": result.error("I_inf"),
        "P_sat_w": result.value("P_sat"),
        "P_sat_sigma_w": result.error("P_sat"),
        "saturation_intensity": 0.5 * result.value("I_inf"),
    }


def cmd_diffusion_rate(args, run: Run) -> Dict[str, Any]:
    rate = diffusion_rate(args.ul, args.ftl, args.single)
    return {"diffusion_rate_hz": rate, "lower_bound": True}


def cmd_gap_closing(args, run: Run) -> Dict[str, Any]:
    fits = {}
    for label, path in (("down", args.down), ("up", args.up)):
        data = data_io.load_xy_csv(path)
        fits[label] = fit_model("boltzmann", data.x, data.y, data.sigma, sigma_level=run.config.sigma_level,
                                **run.config.solver_options())
    closing = gap_closing_range(fits["down"], fits["up"], run.config.sigma_level)
    grid = gap_closing_grid()
    for label, result in fits.items():
        y, lo, hi = result.band(grid)
        run.plot(f"gap-closing-{label}", grid, y, lo, hi, xlabel="T (K)", ylabel="Hz")
    return {"range": closing.to_dict(), "fit_down": fits["down"].to_dict(), "fit_up": fits["up"].to_dict()}


def cmd_classify(args, run: Run) -> Dict[str, Any]:
    if len(args.temperature) != len(args.series):
        raise InvalidParameterError("give one --temperature per power-series file")
    gamma = run.config.decay_rate()
    reports = []
    for path, temperature in zip(args.series, args.temperature):
        series = data_io.load_power_series(path, temperature)
        report = classify(series, gamma)
        reports.append(report)
        omega = series.column("omega")
        y, lo, hi = report.dephasing_fit.band(omega)
        run.plot(f"classify-{temperature:g}K", to_ordinary(omega), to_ordinary(y), to_ordinary(lo), to_ordinary(hi),
                 xlabel="Rabi frequency (Hz)", ylabel="dephasing (Hz)")
    result: Dict[str, Any] = {"reports": [r.to_dict() for r in reports]}
    if len(reports) > 1:
        result["bracket"] = coherence_temperature_bracket(reports).to_dict()
    return result


def cmd_report(args, run: Run) -> Dict[str, Any]:
    from pdf_generator import generate_pdf_report

    envelopes = []
    for path in args.envelopes:
        try:
            envelopes.append(ResultEnvelope.model_validate_json(Path(path).read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise InvalidParameterError(f"file not found: {path}") from None
        except ValueError as exc:
            raise InvalidParameterError(f"{path}: not a result envelope ({exc})") from None
    envelopes.sort(key=lambda e: e.command)
    generate_pdf_report(envelopes, str(run.output_dir / "report.pdf"))
    run.register(run.output_dir / "report.pdf")
    run.write_text("report.md", "\n".join(export_to_markdown(e) for e in envelopes))
    return {"commands": [e.command for e in envelopes]}


# ============================================================
# PARSER
# ============================================================

def _add_emitter_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--omega-hz", type=float, required=True, help="Rabi frequency Ω/2π")
    parser.add_argument("--gamma-c-hz", type=float, default=0.0, help="pure dephasing γc/2π")
    parser.add_argument("--delta-hz", type=float, default=0.0, help="laser detuning Δ/2π")


def _add_diffusion_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sigma-fwhm-hz", type=float, default=0.0,
                        help="FWHM of the Gaussian detuning distribution (0: no diffusion)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    common.add_argument("--config", type=Path, help="flat TOML configuration file")
    common.add_argument("--output-dir", type=Path, help="overrides output_dir from the config")
    common.add_argument("--seed", type=int, help="seed for stochastic commands")
    common.add_argument("--svg", action="store_true", help="also write SVG plots")

    parser = CoherenceArgumentParser(
        prog="coherence",
        description="Optical coherence analysis of a resonantly driven two-level emitter",
    )
    subparsers = parser.add_subparsers(dest="command", parser_class=CoherenceArgumentParser, required=True)

    p = subparsers.add_parser("simulate-g2", parents=[common], help="model g2(tau) with spectral diffusion")
    _add_emitter_options(p)
    _add_diffusion_options(p)
    p.add_argument("--tau-max-s", type=float, default=20e-9)
    p.add_argument("--points", type=int, default=401)
    p.add_argument("--kernel", choices=[k.value for k in CorrelationKernel], default="substitution")
    p.set_defaults(handler=cmd_simulate_g2)

    p = subparsers.add_parser("simulate-pulse", parents=[common], help="excited population under a drive pulse")
    _add_emitter_options(p)
    p.add_argument("--duration-s", type=float, default=10e-9)
    p.add_argument("--rise-time-s", type=float, default=0.0)
    p.add_argument("--shape", choices=[s.value for s in PulseShape], default="ideal_square")
    p.add_argument("--period-s", type=float, default=1e-6)
    p.add_argument("--bin-width-s", type=float, help="defaults to bin_width_s from the config")
    p.add_argument("--trajectories", type=int, default=0, help="also run a quantum-jump ensemble of this size")
    p.add_argument("--trajectory-window-s", type=float, default=20e-9)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_simulate_pulse)

    p = subparsers.add_parser("simulate-stream", parents=[common], help="Monte Carlo photon time tags")
    _add_emitter_options(p)
    _add_diffusion_options(p)
    p.add_argument("--duration-s", type=float, required=True)
    p.add_argument("--efficiency", type=float, default=1.0)
    p.add_argument("--background-rate-hz", type=float, default=0.0)
    p.add_argument("--diffusion", choices=[k.value for k in DiffusionKind], default="frozen_gaussian")
    p.add_argument("--jump-rate-hz", type=float, default=0.0)
    p.add_argument("--epoch-s", type=float, help="frozen-Gaussian redraw interval (default: whole stream)")
    p.add_argument("--format", choices=["binary", "csv"], default="binary")
    p.set_defaults(handler=cmd_simulate_stream)

    p = subparsers.add_parser("correlate", parents=[common], help="coincidence histogram from time tags")
    p.add_argument("tags", type=Path)
    p.add_argument("--bin-width-s", type=float, help="defaults to bin_width_s from the config")
    p.add_argument("--max-tau-s", type=float, default=20e-9)
    p.add_argument("--total-duration-s", type=float, help="stream duration (default: last tag)")
    p.set_defaults(handler=cmd_correlate)

    p = subparsers.add_parser("fit-g2", parents=[common], help="fit Ω and Γ⊥ to a correlation histogram")
    p.add_argument("histogram", type=Path)
    _add_diffusion_options(p)
    p.add_argument("--kernel", choices=[k.value for k in CorrelationKernel], default="substitution")
    p.add_argument("--guess-omega-hz", type=float)
    p.add_argument("--guess-gamma-c-hz", type=float)
    p.set_defaults(handler=cmd_fit_g2)

    p = subparsers.add_parser("fit-linewidth", parents=[common], help="temperature models or PLE line shapes")
    p.add_argument("data", type=Path)
    p.add_argument("--model", choices=LINEWIDTH_MODELS, default="logistic")
    p.add_argument("--ple", action="store_true", help="data holds PLE scans (scan_id,freq_hz,counts)")
    p.add_argument("--temperature", type=float, help="scan temperature (K), selects the line shape")
    p.add_argument("--shape", choices=["lorentzian", "gaussian"])
    p.add_argument("--crossing-hz", type=float, help="report where the logistic fit crosses this linewidth")
    p.add_argument("--points", type=int, default=297)
    p.set_defaults(handler=cmd_fit_linewidth)

    p = subparsers.add_parser("fit-saturation", parents=[common], help="saturation law I(P)")
    p.add_argument("data", type=Path)
    p.add_argument("--points", type=int, default=201)
    p.set_defaults(handler=cmd_fit_saturation)

    p = subparsers.add_parser("diffusion-rate", parents=[common], help="lower bound on the diffusion rate")
    p.add_argument("--ul", type=float, required=True, help="laser scan speed (Hz/s)")
    p.add_argument("--ftl", type=float, required=True, help="Fourier-limited linewidth (Hz)")
    p.add_argument("--single", type=float, required=True, help="single-scan linewidth (Hz)")
    p.set_defaults(handler=cmd_diffusion_rate)

    p = subparsers.add_parser("gap-closing", parents=[common], help="where the gap and half-width bands meet")
    p.add_argument("--down", type=Path, required=True, help="gap vs temperature")
    p.add_argument("--up", type=Path, required=True, help="half-width vs temperature")
    p.set_defaults(handler=cmd_gap_closing)

    p = subparsers.add_parser("classify", parents=[common], help="driving regime from power series")
    p.add_argument("series", type=Path, nargs="+")
    p.add_argument("--temperature", type=float, nargs="+", required=True)
    p.set_defaults(handler=cmd_classify)

    p = subparsers.add_parser("report", parents=[common], help="PDF and Markdown summary of result envelopes")
    p.add_argument("envelopes", type=Path, nargs="+")
    p.set_defaults(handler=cmd_report)
    return parser


# ============================================================
# ENTRY POINT
# ============================================================

def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help exits 0, usage errors exit 1
        return EXIT_OK if exc.code in (None, 0) else EXIT_INVALID

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        config = load_config(args.config)
        output_dir = args.output_dir if args.output_dir is not None else config.output_dir
        run = Run(args.command, config, Path(output_dir), svg=args.svg)
        result = args.handler(args, run)
        run.finish(_inputs(args), result)
    except InvalidParameterError as exc:
        print(f"coherence {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"coherence {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CoherenceError as exc:
        print(f"coherence {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"coherence {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

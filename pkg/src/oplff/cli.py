"""Command-line batch runner.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure,
3 completed but a result is flagged (tone not visible, calibration scan
at a boundary, or a headline number below its configured threshold).
Floor-limited readings are lower bounds; they are marked in the CSV but
only fail when the bound itself is below the threshold.
"""

from __future__ import annotations

import argparse
from dataclasses import replace
import logging
import sys
from pathlib import Path

from . import __version__
from .analysis import analytic_suppression, suppression_at, welch_psd
from .calibrate import CalibrationError, calibrate
from .config import ConfigError, ExperimentConfig, dump, parse_config
from .engine import EngineAbort, drift_run, run_scenario, sweep_tone
from .noise import ToneSpec
from .report import (
    OutputCollision,
    calibration_rows,
    csv_text,
    drift_rows,
    emit_report,
    spectrum_rows,
    summary_text,
    sweep_rows,
)

log = logging.getLogger("oplff")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_FLAGGED = 0, 1, 2, 3


def cmd_simulate(exp: ExperimentConfig):
    s = exp.simulate
    noise = exp.noise.with_tones(*exp.noise.tones, *s.tones)
    on = run_scenario(replace(exp.chain, enable_feedforward=True), noise, s.duration, exp.seed, record=False)
    off = run_scenario(replace(exp.chain, enable_feedforward=False), noise, s.duration, exp.seed, record=False)
    spec_off = welch_psd(off.output_beat(), s.rbw)
    spec_on = welch_psd(on.output_beat(), s.rbw)
    tones, flagged = [], False
    for t in s.tones:
        sup = suppression_at(on, off, t.frequency, s.rbw)
        flagged |= "no_tone" in sup.flags
        tones.append({
            "frequency_hz": t.frequency,
            "off_dbc": sup.off.dbc,
            "on_dbc": sup.on.dbc,
            "suppression_db": sup.value,
            "flags": list(sup.flags),
        })
    header, rows = spectrum_rows({"no_ff": spec_off, "ff": spec_on}, s.span)
    summary = {"rbw_hz": spec_on.rbw, "startup_samples": on.startup, "tones": tones}
    return {".csv": csv_text(header, rows)}, summary, flagged


def cmd_sweep(exp: ExperimentConfig):
    s = exp.sweep
    report = sweep_tone(exp.chain, exp.noise, s.grid(), s.beta, exp.seed,
                        duration=s.duration, rbw=s.rbw, workers=s.workers)
    header, rows = sweep_rows(report)
    worst = float(min(report.measured))
    flagged = worst < s.min_suppression_db or any("no_tone" in e.flags for e in report.entries)
    summary = {
        "min_suppression_db": worst,
        "max_suppression_db": float(max(report.measured)),
        "at_2mhz_db": report.at(2e6).measured_db,
        "flagged_points": [e.frequency for e in report.flagged],
    }
    return {".csv": csv_text(header, rows)}, summary, flagged


def cmd_calibrate(exp: ExperimentConfig):
    c = exp.calibration
    res = calibrate(exp.chain, exp.noise, exp.seed, tone=ToneSpec(c.tone_frequency, c.beta),
                    window=c.window, fine_step=c.fine_step, fiber_lengths=c.fiber_lengths,
                    rounds=c.rounds)
    calibrated = replace(exp, chain=res.apply(exp.chain))
    header, rows = calibration_rows(res.log)
    flagged = bool(res.flags) or res.achieved_suppression < c.min_suppression_db
    files = {".csv": csv_text(header, rows), "_calibrated.yaml": dump(calibrated)}
    return files, res.as_dict(), flagged


def cmd_drift(exp: ExperimentConfig):
    d = exp.drift
    res = drift_run(exp.chain, exp.noise, d.profiles, d.checkpoints.times(), exp.seed,
                    tone_frequency=d.tone_frequency, beta=d.beta, window=d.window, rbw=d.rbw)
    header, rows = drift_rows(res)
    worst = float(min(res.suppression))
    flagged = worst < d.min_suppression_db or any("no_tone" in f for f in res.flags)
    summary = {"min_suppression_db": worst, "max_suppression_db": float(max(res.suppression))}
    return {".csv": csv_text(header, rows)}, summary, flagged


def cmd_oracle(exp: ExperimentConfig):
    o = exp.oracle
    h = complex(exp.chain.ff_response(o.frequency)[0]) if o.use_chain_response else 1.0
    value = analytic_suppression(o.g_ff, o.delta_tau, o.theta_e, h, o.frequency)
    print(f"{value:.1f} dB")
    header = ("g_ff", "delta_tau_s", "theta_e_rad", "frequency_hz", "suppression_db")
    rows = [(o.g_ff, o.delta_tau, o.theta_e, o.frequency, value)]
    return {".csv": csv_text(header, rows)}, {"suppression_db": value}, False


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "calibrate": cmd_calibrate,
    "drift": cmd_drift,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oplff", description="OPL feedforward coherence-cloning simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML experiment file (default: shipped defaults)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--overwrite", action="store_true", help="replace existing output files")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "oracle":
            sp.add_argument("--g-ff", type=float)
            sp.add_argument("--delta-tau", type=float, help="s")
            sp.add_argument("--theta-e", type=float, help="rad")
            sp.add_argument("--frequency", type=float, help="Hz")
    return p


def _apply_overrides(exp: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        exp = replace(exp, seed=args.seed)
    if args.out is not None:
        exp = replace(exp, out=args.out)
    if args.command == "oracle":
        changes = {k: getattr(args, k) for k in ("g_ff", "delta_tau", "theta_e", "frequency")
                   if getattr(args, k) is not None}
        exp = replace(exp, oracle=replace(exp.oracle, **changes))
    return exp


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        exp = _apply_overrides(parse_config(args.config), args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    stem = f"{args.command}_seed{exp.seed}"
    if not args.overwrite:
        taken = sorted(str(p) for p in Path(exp.out).glob(f"{stem}[._]*"))
        if taken:
            print(f"refusing to overwrite {', '.join(taken)} (use --overwrite)", file=sys.stderr)
            return EXIT_RUNTIME

    try:
        files, summary, flagged = COMMANDS[args.command](exp)
    except CalibrationError as err:
        print(f"calibration failed: {err}; best so far {err.best.as_dict()}", file=sys.stderr)
        return EXIT_RUNTIME
    except EngineAbort as err:
        print(f"run aborted: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as err:
        print(f"invalid request: {err}", file=sys.stderr)
        return EXIT_CONFIG

    doc = {
        "command": args.command,
        "config": args.config,
        "seed": exp.seed,
        "flagged": flagged,
        "results": summary,
    }
    files = {**files, "_summary.json": summary_text(doc), "_config.yaml": dump(exp)}
    try:
        written = emit_report(exp.out, stem, files, args.overwrite)
    except OutputCollision as err:
        print(str(err), file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as err:
        print(f"cannot write results to {exp.out}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in written:
        log.info("wrote %s", path)
    if args.command != "oracle":
        print(summary_text(summary), end="")
    return EXIT_FLAGGED if flagged else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

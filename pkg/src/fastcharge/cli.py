"""Command-line entry point: ``fastcharge {run,characterize,soh-sweep,paper-suite}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import FastChargeError
from .harness.config import ScenarioConfig, celsius, load_scenario
from .harness.export import export, write_table_csv, write_trace_csv
from .harness.simulate import DEFAULT_SOH_LEVELS, PulseSchedule, characterization_pulses, soh_sweep
from .harness.simulate import run_scenario
from .harness.suite import SOH_COLUMNS, run_preset_suite
from .plant import AgeingSpec

log = logging.getLogger("fastcharge")


def _common(p):
    p.add_argument("--out-dir", default="out", help="output directory (default: ./out)")
    p.add_argument("--params", default=None, help="parameter file overriding the scenario's")
    p.add_argument("--thermal-form", choices=("series", "classical"), default=None,
                   help="thermal model variant overriding the scenario's")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v progress, -vv per-minute trace")
    p.add_argument("--strict", action="store_true", help="exit with status 2 on any limit violation")


def _override(cfg: ScenarioConfig, args):
    kw = {}
    if args.params is not None:
        kw["params_path"] = args.params
    if args.thermal_form is not None:
        kw["thermal_form"] = args.thermal_form
    return cfg.replace(**kw) if kw else cfg


def _parse_level(text):
    try:
        cap, sei = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected CAPACITY:SEI, got {text!r}") from None
    try:
        return AgeingSpec(cap, sei)
    except FastChargeError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _report(summary):
    t = "not reached" if summary.charging_time_s is None else f"{summary.charging_time_s:.0f} s"
    v = summary.violation_steps
    print(f"{summary.name:24s} {t:>12s}  violations phi/U/T = {v['phi']}/{v['U']}/{v['T']}  "
          f"mean step {summary.mean_step_compute_s * 1e3:.3f} ms  [{summary.termination}]")


def cmd_run(args):
    cfg = _override(load_scenario(args.scenario), args)
    trace, summary = run_scenario(cfg)
    paths = export(trace, summary, args.out_dir)
    _report(summary)
    log.info("wrote %s", ", ".join(map(str, paths)))
    return [summary]


def cmd_characterize(args):
    cfg = _override(ScenarioConfig(controller="cccv", controller_settings={"i_cc": 1.0},
                                   T_amb=celsius(args.T_amb_C), soc_target=0.8,
                                   max_duration=args.max_duration, name="characterize"), args)
    pulses = PulseSchedule(current_steps=tuple(args.current_steps),
                           thermal_pulses=tuple(celsius(t) for t in args.thermal_pulses_C))
    runs = characterization_pulses(cfg, pulses)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for k, run in enumerate(runs):
        stem = f"pulse_{k:02d}_{run.kind}"
        write_trace_csv(run.trace, out / f"{stem}.csv", timing=False)
        index.append({"file": f"{stem}.csv", "kind": run.kind, "magnitude": run.magnitude, "onset_s": run.onset_s})
        print(f"{stem}: {run.kind} {run.magnitude:g}, onset {run.onset_s}")
    write_table_csv(index, ("file", "kind", "magnitude", "onset_s"), out / "pulses.csv")
    return []


def cmd_soh(args):
    base = _override(ScenarioConfig(controller="mpc", T_amb=celsius(args.T_amb_C), name="mpc_soh"), args)
    levels = args.levels or list(DEFAULT_SOH_LEVELS)
    results = soh_sweep(base, levels)
    rows = []
    for lv, trace, summary in results:
        export(trace, summary, Path(args.out_dir) / "traces")
        rows.append({"capacity_fraction": lv.capacity_fraction,
                     "sei_resistance_multiplier": lv.sei_resistance_multiplier,
                     "soc_at_first_derate": summary.soc_at_first_derate,
                     "charging_time_s": summary.charging_time_s, "termination": summary.termination})
        _report(summary)
    write_table_csv(rows, SOH_COLUMNS, Path(args.out_dir) / "soh_sweep.csv")
    return [s for _, _, s in results]


def cmd_suite(args):
    res = run_preset_suite(args.out_dir, params_path=args.params, thermal_form=args.thermal_form or "classical")
    for _, _, s in res.runs.values():
        _report(s)
    for _, _, s in res.soh:
        _report(s)
    return [s for _, _, s in res.runs.values()] + [s for _, _, s in res.soh]


def build_parser():
    ap = argparse.ArgumentParser(prog="fastcharge", description="Constrained fast-charging simulations.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one scenario file")
    p.add_argument("scenario", help="scenario YAML file")
    _common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("characterize", help="step responses of the anode potential")
    _common(p)
    p.add_argument("--T-amb-C", type=float, default=20.0, help="ambient temperature in degC")
    p.add_argument("--current-steps", type=float, nargs="*", default=[2.5, 5.0, 7.5], help="current step sizes in A")
    p.add_argument("--thermal-pulses-C", type=float, nargs="*", default=[-20.0, 60.0],
                   help="ambient pulse levels in degC")
    p.add_argument("--max-duration", type=float, default=10800.0, help="run length cap in s")
    p.set_defaults(func=cmd_characterize)
    p = sub.add_parser("soh-sweep", help="MPC charges over ageing levels")
    _common(p)
    p.add_argument("--T-amb-C", type=float, default=20.0, help="ambient temperature in degC")
    p.add_argument("--levels", type=_parse_level, nargs="+", default=None,
                   help="CAPACITY:SEI pairs, e.g. 1:1 0.9:1.5 0.8:2")
    p.set_defaults(func=cmd_soh)
    p = sub.add_parser("paper-suite", help="full CCCV/PID/MPC matrix plus the ageing sweep")
    _common(p)
    p.set_defaults(func=cmd_suite)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        summaries = args.func(args)
    except FastChargeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.strict and any(s.hard_violation for s in summaries):
        print("limit violation detected (--strict)", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``marcsim <subcommand> [options]``.

Subcommands: gen, run, sweep-trc, sweep-aggr, detect, bench-detect.
Options common to all of them: ``--config FILE`` plus every config key as a
flag (``--timing.t_refi 7800``, ``--mitigation.side mc``). ``MARC_SEED``
sets the default seed.

Errors end the process with status 2 and one line on stderr:
``error kind=<kind> message="<text>"``.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import KEYS, ExperimentConfig, load_config, set_value
from .errors import ConfigError, MarcSimError


def _add_key_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("config keys (override --config)")
    for key in KEYS:
        g.add_argument(f"--{key}", dest=f"key:{key}", metavar="V", default=argparse.SUPPRESS)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", dest="key:run.seed", default=argparse.SUPPRESS, type=str,
                   help="base seed (default: $MARC_SEED or 0)")
    p.add_argument("--seeds", dest="key:run.seeds", default=argparse.SUPPRESS, type=str,
                   help="number of seeds to average")
    p.add_argument("--side", dest="key:mitigation.side", default=argparse.SUPPRESS)
    p.add_argument("--scheme", dest="key:mitigation.scheme", default=argparse.SUPPRESS)
    p.add_argument("--marc", dest="key:run.marc", default=argparse.SUPPRESS)
    p.add_argument("--immediate-cure", dest="key:mitigation.immediate_cure",
                   action="store_const", const="true", default=argparse.SUPPRESS)
    p.add_argument("--rfm-blocking-ns", dest="key:run.rfm_blocking_ns", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="marcsim", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a trace file from pattern.* keys")
    _add_key_flags(p)
    p.add_argument("-o", "--out", help="output trace path (default stdout)")

    p = sub.add_parser("run", help="simulate one pattern or trace and write a report CSV")
    _add_key_flags(p)
    p.add_argument("trace", nargs="?", help="trace file (overrides pattern.*)")
    p.add_argument("-o", "--out", default="report.csv")
    p.add_argument("--event-log", help="per-window detector log CSV")
    p.add_argument("--baseline", action="store_true",
                   help="also run the vanilla 60 ns / 50-aggressor baseline to fill the mer column")
    p.add_argument("--no-plot", action="store_true")

    for name, what in (("sweep-trc", "tRC"), ("sweep-aggr", "aggressor count")):
        p = sub.add_parser(name, help=f"MER sweep over {what}, vanilla and MARC")
        _add_key_flags(p)
        p.add_argument("--values", help="comma-separated sweep values")
        p.add_argument("-o", "--out", default=f"{name}.csv")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("detect", help="run the detector alone and write the per-window log")
    _add_key_flags(p)
    p.add_argument("trace", nargs="?", help="trace file (overrides pattern.*)")
    p.add_argument("-o", "--out", default="detect.csv")
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("bench-detect", help="recognition-rate suite over tRC combinations")
    _add_key_flags(p)
    p.add_argument("--traces", type=int, default=100, help="traces per case")
    p.add_argument("--windows", type=int, default=200, help="tREFi windows per trace")
    p.add_argument("--cases", help="comma-separated period lengths (default 1-20,50,70,90)")
    p.add_argument("-o", "--out", default="bench-detect.csv")
    p.add_argument("--no-plot", action="store_true")
    return ap


def experiment_from_args(args) -> ExperimentConfig:
    values = load_config(args.config) if getattr(args, "config", None) else {}
    for dest, raw in vars(args).items():
        if dest.startswith("key:"):
            set_value(values, dest[4:], raw, where="flag")
    return ExperimentConfig(values)


def _pattern_trace(exp: ExperimentConfig, trace_path=None):
    from .patterns import AttackSpec, ComboSpec, NormalSpec, gen_attack, gen_normal, gen_trc_combo, load_trace
    timing = exp.timing()
    spec = trace_path or exp.pattern()
    if isinstance(spec, str):
        return load_trace(spec), None
    if isinstance(spec, AttackSpec):
        return gen_attack(spec, timing), spec
    if isinstance(spec, ComboSpec):
        return gen_trc_combo(spec, timing), spec
    if isinstance(spec, NormalSpec):
        return gen_normal(spec, timing), spec
    raise ConfigError("no pattern source")


def cmd_gen(args) -> int:
    from .patterns import save_trace, write_trace
    exp = experiment_from_args(args)
    trace, _ = _pattern_trace(exp)
    if args.out:
        save_trace(trace, args.out)
        print(f"wrote {len(trace)} commands to {args.out}")
    else:
        sys.stdout.write(write_trace(trace))
    return 0


def cmd_run(args) -> int:
    import numpy as np
    from .detector import write_event_log
    from .dram import validate_trace
    from .engine import build_schedule, evaluate
    from .experiments import baseline_exposure
    from .metrics import RunReport, write_reports
    from .patterns import AttackSpec

    exp = experiment_from_args(args)
    cfg = exp.sim()
    trace, spec = _pattern_trace(exp, args.trace)
    validate_trace(trace, cfg.timing)
    sched = build_schedule(trace, cfg)
    seeds = exp.seeds if cfg.mitigation.stochastic else exp.seeds[:1]
    results = [evaluate(sched, cfg.mitigation, s) for s in seeds]
    mean_exp = float(np.mean([r.max_exposure for r in results]))
    mer_val = None
    if args.baseline:
        base = baseline_exposure(cfg, exp.seeds, trace.duration)
        mer_val = mean_exp / base.mean if base.mean else None
    trc = spec.trc if isinstance(spec, AttackSpec) else None
    n_ag = spec.n_aggressors if isinstance(spec, AttackSpec) else None
    pid = Path(args.trace).stem if args.trace else (f"attack-n{n_ag}-t{trc}" if trc else exp.get("pattern.kind"))
    rep = RunReport(pid, cfg.mitigation.side.value, cfg.mitigation.label, cfg.marc_enabled, trc, n_ag,
                    mean_exp, mer_val, sched.recognition, sched.n_acts, len(sched.ref_times),
                    len(sched.rfm_pos), int(round(np.mean([r.cures for r in results]))))
    write_reports([rep], args.out)
    if args.event_log and sched.records is not None:
        write_event_log(sched.records, args.event_log)
    if not args.no_plot and sched.records:
        from .plotting import plot_timeline
        plot_timeline(sched.records, args.out)
    print(f"max_exposure={mean_exp:g} recognition_rate={sched.recognition:.4f} "
          f"acts={rep.acts} refs={rep.refs} rfms={rep.rfms} cures={rep.cures} -> {args.out}")
    return 0


def _sweep_cmd(args, kind: str) -> int:
    from .experiments import improvement, sweep_aggressors, sweep_trc, write_sidecar
    from .metrics import write_reports
    exp = experiment_from_args(args)
    cfg = exp.sim()
    duration = exp.values.get("pattern.duration")
    if kind == "trc":
        vals = [int(v) for v in args.values.split(",")] if args.values else exp.get("sweep.trc_values")
        reports, base = sweep_trc(cfg, vals, exp.seeds, n_aggressors=exp.get("pattern.n_aggressors"),
                                  duration=duration, jobs=args.jobs)
        key = "trc_ns"
    else:
        vals = [int(v) for v in args.values.split(",")] if args.values else exp.get("sweep.aggr_values")
        reports, base = sweep_aggressors(cfg, vals, exp.seeds, trc=exp.get("pattern.trc"),
                                         duration=duration, jobs=args.jobs)
        key = "n_aggressors"
    write_reports(reports, args.out)
    out = Path(args.out)
    write_sidecar(reports, out.with_name(out.stem + "_seeds.csv"), base.mean)
    if not args.no_plot:
        from .plotting import plot_sweep
        plot_sweep(reports, args.out, key)
    for k, v in sorted(improvement(reports, key).items()):
        print(f"{key}={k} improvement={v:.3g}x")
    print(f"baseline max_exposure={base.mean:g}; wrote {len(reports)} rows to {args.out}")
    return 0


def cmd_detect(args) -> int:
    from .detector import write_event_log
    from .experiments import detect_only
    exp = experiment_from_args(args)
    trace, _ = _pattern_trace(exp, args.trace)
    records, rate = detect_only(trace, exp.detector(), exp.timing())
    write_event_log(records, args.out)
    if not args.no_plot:
        from .plotting import plot_timeline
        plot_timeline(records, args.out)
    print(f"windows={len(records)} recognition_rate={rate:.4f} -> {args.out}")
    return 0


def cmd_bench(args) -> int:
    from .experiments import BENCH_CASES, bench_detect, write_bench
    exp = experiment_from_args(args)
    cases = [int(c) for c in args.cases.split(",")] if args.cases else BENCH_CASES
    rows = bench_detect(cases, args.traces, args.windows, seed=exp.get("run.seed"),
                        detector=exp.detector(), timing=exp.timing())
    write_bench(rows, args.out)
    if not args.no_plot:
        from .plotting import plot_bench
        plot_bench(rows, args.out)
    for r in rows:
        print(f"n={r.n_distinct:3d} rate={r.mean_rate:.4f} (min {r.min_rate:.3f})")
    return 0


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "sweep-trc": lambda a: _sweep_cmd(a, "trc"),
            "sweep-aggr": lambda a: _sweep_cmd(a, "aggr"), "detect": cmd_detect,
            "bench-detect": cmd_bench}


def error_line(kind: str, message: str) -> str:
    return f"error kind={kind} message={json.dumps(message)}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except MarcSimError as exc:
        print(error_line(exc.kind, str(exc)), file=sys.stderr)
    except OSError as exc:
        print(error_line("io_error", str(exc)), file=sys.stderr)
    except ValueError as exc:
        print(error_line("invalid_value", str(exc)), file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())

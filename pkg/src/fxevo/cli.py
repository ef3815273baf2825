"""Command-line entry point: ``fxevo run | baseline | synth | inspect``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import harness
from .chartizer import rasterize
from .neuralnet import Genotype, GenotypeError
from .pricefeed import DataError, load_csv, synth_series, window, write_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

_INT_KEYS = {"runs", "max_evaluations", "population", "probe_interval", "train_len",
             "tuning_patience", "restarts"}
_FLOAT_KEYS = {"perturbation_range", "size_penalty"}
_BOOL_KEYS = {"jordan", "normalize_inputs", "pooled"}
# config-file aliases matching the command-line flag names
_ALIASES = {"budget": "max_evaluations"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {value!r}")


def _coerce(key: str, value: str):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise UsageError(f"{key}: bad value {value!r}") from None
    if key in _BOOL_KEYS:
        return _bool(value)
    raise UsageError(f"unknown config key {key!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fxevo", description="Neuroevolved forex trading agents.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="run one benchmark arm or all of them")
    which = run.add_mutually_exclusive_group()
    which.add_argument("--experiment", help="arm name, e.g. SlidingWindow5 or ChartPlane10X10")
    which.add_argument("--all", action="store_true", help="run all 13 arms")
    run.add_argument("--data", help="timestamp,close CSV (default: seeded synthetic random walk)")
    run.add_argument("--gap-tolerant", action="store_true", help="allow weekend gaps in timestamps")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (default: results)")
    run.add_argument("--budget", type=int, help="evaluations per evolutionary run")
    run.add_argument("--population", type=int)
    run.add_argument("--runs", type=int)
    run.add_argument("--profile", choices=sorted(harness.PROFILES))
    run.add_argument("--config", help="key = value configuration file")
    run.add_argument("--jobs", type=int, default=1, help="worker processes per arm")

    base = sub.add_parser("baseline", help="print Buy & Hold and Max Possible")
    base.add_argument("--data", required=True)
    base.add_argument("--train-len", type=int, default=800)
    base.add_argument("--gap-tolerant", action="store_true")

    syn = sub.add_parser("synth", help="write a synthetic price series")
    syn.add_argument("--kind", choices=("constant", "trend", "sine", "random_walk"), default="random_walk")
    syn.add_argument("--length", type=int, default=1000)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--base", type=float, default=1.3)
    syn.add_argument("--step", type=float, default=0.0001)
    syn.add_argument("--amp", type=float, default=0.01)
    syn.add_argument("--period", type=float, default=20.0)
    syn.add_argument("--sigma", type=float, default=0.0005)
    syn.add_argument("--out", required=True)

    ins = sub.add_parser("inspect", help="pretty-print a genotype or a chart raster")
    what = ins.add_mutually_exclusive_group(required=True)
    what.add_argument("--genotype", help="genotype JSON file")
    what.add_argument("--raster", action="store_true", help="render the chart ending at --index")
    ins.add_argument("--data")
    ins.add_argument("--index", type=int)
    ins.add_argument("--width", type=int, default=10)
    ins.add_argument("--height", type=int, default=10)
    return p


def _resolve_run(args) -> tuple[list[harness.ExperimentSpec], dict]:
    settings: dict[str, str] = {}
    if args.config:
        try:
            settings = harness.parse_config(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read config: {exc}") from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    cli = {"experiment": args.experiment, "data": args.data, "seed": args.seed, "out": args.out,
           "budget": args.budget, "population": args.population, "runs": args.runs,
           "profile": args.profile}
    for k, v in cli.items():
        if v is not None:
            settings[k] = str(v)
    if args.all:
        settings["experiment"] = "all"
    if args.gap_tolerant:
        settings["gap_tolerant"] = "true"

    name = settings.pop("experiment", None)
    if not name:
        raise UsageError("choose --experiment NAME or --all")
    profile = settings.pop("profile", "desk")
    if profile not in harness.PROFILES:
        raise UsageError(f"unknown profile {profile!r}")
    try:
        seed = int(settings.pop("seed", "0"))
    except ValueError:
        raise UsageError("seed must be an integer") from None
    out = settings.pop("out", "results")
    data = settings.pop("data", None)
    gap = _bool(settings.pop("gap_tolerant", "false"))
    overrides = {}
    for key, value in settings.items():
        key = _ALIASES.get(key, key)
        overrides[key] = _coerce(key, value)
    if data:
        overrides["dataset"] = data
    names = harness.experiment_names() if name == "all" else [name]
    try:
        specs = [harness.experiment(n, profile, **overrides) for n in names]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    resolved = {"experiments": ",".join(names), "profile": profile, "seed": seed, "out": out,
                "data": data or "synthetic:random_walk(length=1000,seed=0,base=1.45,sigma=0.0005)",
                "gap_tolerant": gap}
    for k, v in dataclasses.asdict(specs[0]).items():
        if k not in ("name", "window", "chart", "dataset"):
            resolved[k] = v
    return specs, resolved


def _cmd_run(args) -> int:
    specs, resolved = _resolve_run(args)
    if resolved["data"].startswith("synthetic:"):
        series = harness.default_series()
    else:
        series = load_csv(resolved["data"], resolved["gap_tolerant"])
    train_len = specs[0].train_len
    if len(series) <= train_len:
        raise DataError(f"dataset has {len(series)} points; need more than train_len={train_len}")
    baselines = harness.baseline_report(series, train_len)
    stats = {}
    for spec in specs:
        logging.getLogger("fxevo").info("running %s (%d runs x %d evaluations)",
                                        spec.name, spec.runs, spec.max_evaluations)
        stats[spec.name] = harness.run_experiment(spec, resolved["seed"], series, jobs=args.jobs)
    harness.emit_outputs(stats, resolved["out"], baselines, resolved)
    print((Path(resolved["out"]) / "results.tsv").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _cmd_baseline(args) -> int:
    series = load_csv(args.data, args.gap_tolerant)
    if not 0 < args.train_len < len(series):
        raise DataError(f"train length {args.train_len} does not split a {len(series)}-point series")
    print(harness.format_baselines(harness.baseline_report(series, args.train_len)))
    return EXIT_OK


def _cmd_synth(args) -> int:
    try:
        series = synth_series(args.kind, args.length, args.seed, base=args.base, step=args.step,
                              amp=args.amp, period=args.period, sigma=args.sigma)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_csv(series, args.out)
    return EXIT_OK


def _cmd_inspect(args) -> int:
    if args.genotype:
        try:
            g = Genotype.from_json(Path(args.genotype).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read genotype: {exc}") from None
        print(f"encoding: {g.encoding}  neurons: {g.size}  links: {g.link_count()}  "
              f"weights: {g.weight_count()}")
        if g.substrate_spec is not None:
            s = g.substrate_spec
            print(f"substrate: chart {s.chart_width}x{s.chart_height}, hidden {s.hidden_shape}, "
                  f"jordan={s.jordan}  preprocessors: {', '.join(g.preprocessors)}")
        for s in g.sensors:
            print(f"  sensor {s.id}: {s.kind} {s.params or ''} (vl={s.vl})")
        for n in g.neurons:
            srcs = ", ".join(f"{l.source}{'(r)' if l.recurrent else ''}" for l in n.in_links)
            print(f"  neuron {n.id}: {n.af} <- {srcs}")
        for a in g.actuators:
            print(f"  actuator {a.id}: {a.kind} <- {', '.join(a.fanin)}")
        return EXIT_OK
    if not args.data:
        raise UsageError("--raster needs --data")
    series = load_csv(args.data, gap_tolerant=True)
    index = args.index if args.index is not None else len(series) - 1
    try:
        print(rasterize(window(series, index, args.width), args.height).to_text())
    except (ValueError, IndexError) as exc:
        raise DataError(str(exc)) from None
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "baseline": _cmd_baseline, "synth": _cmd_synth,
                "inspect": _cmd_inspect}
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"fxevo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GenotypeError) as exc:
        print(f"fxevo: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"fxevo: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

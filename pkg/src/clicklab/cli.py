"""``clicklab`` command-line tool.

Exit codes: 0 success, 2 configuration error, 3 analysis precondition failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, experiments, filters, metrics, pairs
from .configfile import ConfigDoc, ConfigError, load_config, resolve_config
from .experiments import PreconditionError
from .timetag import TagFormatError, TagRun, read_tags, write_tags

EXIT_CONFIG = 2
EXIT_PRECONDITION = 3

_DEFAULT_CONFIGS = {"simulate": None, "characterize": "paper-characterize", "pdc": "paper-pdc",
                    "thermo": "paper-thermo"}


def _load(args) -> ConfigDoc:
    ref = args.config or _DEFAULT_CONFIGS.get(args.command)
    if ref is None:
        raise ConfigError(f"{args.command} needs --config")
    doc = load_config(resolve_config(ref))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        doc.values[k.strip()] = v.strip()
    return doc


def _seed(args, doc: ConfigDoc) -> int:
    if args.seed is not None:
        return args.seed
    return doc.get("seed", 0, int)


def _flatten(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        elif isinstance(v, list):
            for i, item in enumerate(v):
                if isinstance(item, dict):
                    yield from _flatten(item, f"{key}.{i}.")
                else:
                    yield f"{key}.{i}", item
        else:
            yield key, v


def write_report(report: dict, out: Path, fmt: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out / "report.json"
        path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    else:
        path = out / "report.csv"
        lines = ["key,value"] + [f"{k},{'' if v is None else v}" for k, v in _flatten(report)]
        path.write_text("\n".join(lines) + "\n")
    return path


def _write_outcome(outcome: experiments.Outcome, args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, h in outcome.histograms.items():
        (out / f"hist_{name}.csv").write_text(h.to_csv())
    for name, text in outcome.traces.items():
        (out / f"{name}.csv").write_text(text)
    files = {}
    suffix = ".csv" if args.tag_format == "csv" else ".clk"
    for name, run in outcome.runs.items():
        path = out / f"{name}{suffix}"
        write_tags(run, path)
        files[name] = path.name
    if files:
        outcome.report["files"] = files
    if args.command == "simulate":
        (out / "run.json").write_text(json.dumps(outcome.report, indent=2, sort_keys=True) + "\n")
    write_report(outcome.report, out, args.format)


def _summary(report: dict) -> str:
    res = report.get("results", {})
    cmd = report["command"]
    if cmd == "pdc":
        s, k = res["singles_Hz"], res["klyshko"] or {}
        c = res["coincidences"]["blocked_gated"]["matched"]
        car = res["car"]["value"] if res["car"] else float("nan")
        return (f"singles {s['signal']['value']:.1f} / {s['idler']['value']:.1f} Hz, "
                f"coincidences {c['rate_Hz']:.2f} Hz, accidentals {res['accidentals_Hz']['value']:.3e} Hz, "
                f"CAR {car:.0f}, Klyshko {100 * k.get('eta_signal', float('nan')):.2f}% / "
                f"{100 * k.get('eta_idler', float('nan')):.2f}%")
    if cmd == "thermo":
        c, b = res["control"], res["ln2"]
        return (f"peak-to-peak {c['peak_to_peak_K']:.2e} K, mean power {c['mean_power_W']:.3f} W, "
                f"LN2 {b['evaporation_g_per_h']:.1f} g/h, endurance {b['endurance_h']:.1f} h")
    if cmd == "characterize":
        rows = []
        for p in res["points"]:
            rows.append(f"T={p['temperature_C']:g} bias={p['bias']}: block {p['blocking_ps'] / 1e6:.2f} us, "
                        f"afterpulse {p['afterpulse_raw']:.3f} -> {p['afterpulse_blocked']:.3f}, "
                        f"eta {100 * p['efficiency']['value']:.2f}%, NEP {p['nep_W_per_rtHz']:.3e} W/rtHz")
        return "\n".join(rows)
    return json.dumps(res, sort_keys=True)


def _cmd_experiment(args) -> int:
    doc = _load(args)
    seed = _seed(args, doc)
    fn = {"simulate": experiments.run_simulate, "characterize": experiments.run_characterize,
          "pdc": experiments.run_pdc, "thermo": experiments.run_thermo}[args.command]
    outcome = fn(doc, seed)
    _write_outcome(outcome, args)
    print(_summary(outcome.report))
    return 0


def _read_input(path) -> TagRun:
    return read_tags(path)


def _channel(run: TagRun, ch: int | None):
    if ch is None:
        if len(run.streams) != 1:
            raise PreconditionError(f"input has channels {sorted(run.streams)}; pick one with --channel")
        return next(iter(run.streams.values()))
    if ch not in run.streams:
        raise PreconditionError(f"channel {ch} not in input")
    return run.streams[ch]


def _cmd_filter(args) -> int:
    run = _read_input(args.input)
    stream = _channel(run, args.channel)
    steps = {"input_count": len(stream)}
    if args.block_us is not None:
        stream = filters.blocking_filter(stream, int(round(args.block_us * 1e6)))
        steps["blocking_ps"] = int(round(args.block_us * 1e6))
        steps["after_blocking"] = len(stream)
    if args.gate_offset_ps is not None:
        sync_run = _read_input(args.sync) if args.sync else run
        sync = _channel(sync_run, args.sync_channel)
        gate = filters.GateConfig(args.gate_offset_ps, args.gate_width_ps, args.gate_period_ps)
        stream = filters.time_gate(stream, sync, gate)
        steps.update(gate_offset_ps=gate.offset_ps, gate_width_ps=gate.width_ps, gate_period_ps=gate.period_ps,
                     after_gate=len(stream))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".csv" if args.tag_format == "csv" else ".clk"
    write_tags(TagRun.from_streams(stream), out / f"filtered{suffix}")
    report = {"command": "filter", "version": __version__, "input": str(args.input), "results": steps}
    write_report(report, out, args.format)
    print(json.dumps(steps, sort_keys=True))
    return 0


def _cmd_hist(args) -> int:
    run = _read_input(args.input)
    a = _channel(run, args.channel)
    bin_ps = args.bin_ps
    if args.kind == "interevent":
        h = metrics.inter_event_histogram(a, bin_ps, int(args.range_ps), args.rule)
    elif args.kind == "sync":
        sync = _channel(run, args.other_channel)
        h = metrics.sync_histogram(a, sync, bin_ps, args.range_ps, args.period_ps)
    else:
        b = _channel(run, args.other_channel)
        h = pairs.cross_correlation_histogram(a, b, bin_ps, int(args.range_ps))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"hist_{args.kind}.csv").write_text(h.to_csv())
    report = {"command": "hist", "version": __version__, "input": str(args.input), "kind": args.kind,
              "results": {"bins": len(h), "total_in": h.total_in, "underflow": h.underflow,
                          "overflow": h.overflow, "bin_width_ps": h.bin_width_ps, "origin_ps": h.origin_ps}}
    write_report(report, out, args.format)
    print(json.dumps(report["results"], sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clicklab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"clicklab {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="clicklab-out", help="output directory")
    common.add_argument("--format", choices=("json", "csv"), default="json", help="report format")
    common.add_argument("--tag-format", choices=("csv", "bin"), default="bin", help="tag file format")

    exp = argparse.ArgumentParser(add_help=False, parents=[common])
    exp.add_argument("--config", help="config file or shipped config name")
    exp.add_argument("--seed", type=int, help="overrides the config seed")
    exp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")

    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[exp], help="simulate tag streams (cw, pdc, dark-only)")
    sub.add_parser("characterize", parents=[exp], help="afterpulsing, blocking, efficiency and NEP")
    sub.add_parser("pdc", parents=[exp], help="pair-source coincidence experiment")
    sub.add_parser("thermo", parents=[exp], help="temperature control and LN2 budget")

    f = sub.add_parser("filter", parents=[common], help="apply blocking and gating to a tag file")
    f.add_argument("--input", required=True)
    f.add_argument("--channel", type=int)
    f.add_argument("--block-us", type=float)
    f.add_argument("--gate-offset-ps", type=int)
    f.add_argument("--gate-width-ps", type=int, default=1300)
    f.add_argument("--gate-period-ps", type=float)
    f.add_argument("--sync", help="tag file holding the sync channel (default: the input)")
    f.add_argument("--sync-channel", type=int, default=0)

    h = sub.add_parser("hist", parents=[common], help="histogram a tag file")
    h.add_argument("--input", required=True)
    h.add_argument("--kind", choices=("interevent", "sync", "xcorr"), default="interevent")
    h.add_argument("--channel", type=int)
    h.add_argument("--other-channel", type=int, default=0, help="sync or partner channel")
    h.add_argument("--bin-ps", type=int, default=100)
    h.add_argument("--range-ps", type=int, default=20_000_000)
    h.add_argument("--rule", choices=("all", "next"), default="all")
    h.add_argument("--period-ps", type=float)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"filter": _cmd_filter, "hist": _cmd_hist}.get(args.command, _cmd_experiment)
    try:
        return handler(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, TagFormatError, ValueError) as e:
        print(f"cannot analyse: {e}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 config/validation error, 3 I/O error.
Log verbosity comes from the CACHEPEER_LOG environment variable (e.g. DEBUG).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .cache import AccessLog
from .errors import ConfigInvalid, NoPeeringDefined
from .interception import MissPredictorConfig, derive_rules, rules_to_csv
from .sim.config import load_config, load_scenario_file, validate_config
from .sim.engine import run as run_sim
from .sim.metrics import build_report, dumps_report, report_csv, write_outputs

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("cachepeer")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def _load(path, seed=None):
    data = load_scenario_file(path)
    if seed is not None and isinstance(data, dict):
        data["seed"] = seed
    return load_config(data)


def cmd_run(args):
    cfg = _load(args.scenario, args.seed)
    result = run_sim(cfg)
    write_outputs(result, args.out, args.format)
    print("wrote %s" % os.path.join(args.out, "report.json"))
    return EXIT_OK


def compare_reports(on, off):
    g_on, g_off = on["global"], off["global"]

    def delta(a, b):
        return None if a is None or b is None else a - b

    return {
        "delta_latency_mean_ms": delta(g_on["latency_ms"]["mean"], g_off["latency_ms"]["mean"]),
        "delta_latency_p95_ms": delta(g_on["latency_ms"]["p95"], g_off["latency_ms"]["p95"]),
        "delta_wan_bytes": g_on["wan_bytes"] - g_off["wan_bytes"],
        "delta_mean_vi_traversals": delta(g_on["mean_vi_traversals"], g_off["mean_vi_traversals"]),
        "peering_bytes": g_on["peering_bytes"],
        "peer_hits": g_on["served"]["peer"],
        "requests": g_on["requests"],
    }


def compare(cfg):
    """Paired runs, peering on and off, same seed; returns (on, off, delta) reports."""
    if not cfg.peering.links:
        raise NoPeeringDefined("scenario defines no peering links")
    on = run_sim(cfg, peering=True)
    off = run_sim(cfg, peering=False)
    rep_on, rep_off = build_report(on), build_report(off)
    return on, off, compare_reports(rep_on, rep_off)


def cmd_compare(args):
    cfg = _load(args.scenario, args.seed)
    on, off, delta = compare(cfg)
    write_outputs(on, os.path.join(args.out, "peering_on"), args.format)
    write_outputs(off, os.path.join(args.out, "peering_off"), args.format)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "delta.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(delta, indent=2, sort_keys=True) + "\n")
    print(json.dumps(delta, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_derive_rules(args):
    with open(args.log, encoding="utf-8", newline="") as fh:
        try:
            records = AccessLog.from_csv(fh)
        except ValueError as exc:
            print("%s: %s" % (args.log, exc), file=sys.stderr)
            return EXIT_CONFIG
    if args.threshold is None:
        args.threshold = 0.8
    try:
        cfg = MissPredictorConfig(args.window, args.min_samples, args.threshold)
    except ValueError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    now = args.now
    if now is None:
        now = records.records[-1].time if len(records) else 0.0
    table = derive_rules(records, cfg, now, args.tenant)
    text = rules_to_csv([table])
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_validate(args):
    data = load_scenario_file(args.scenario)
    violations = validate_config(data)
    for v in violations:
        print(v)
    if any(v.severity == "error" for v in violations):
        return EXIT_CONFIG
    if not violations:
        print("ok")
    return EXIT_OK


def cmd_report(args):
    with open(args.report, encoding="utf-8") as fh:
        try:
            report = json.load(fh)
        except json.JSONDecodeError as exc:
            print("%s: line %d column %d: %s" % (args.report, exc.lineno, exc.colno, exc.msg),
                  file=sys.stderr)
            return EXIT_CONFIG
    if args.format == "csv":
        sys.stdout.write(report_csv(report))
    else:
        sys.stdout.write(dumps_report(report))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="cachepeer", description="vCache peering simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    r.add_argument("--format", choices=["json", "csv"], default="json")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="paired peering-on/off runs")
    c.add_argument("--scenario", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True)
    c.add_argument("--format", choices=["json", "csv"], default="json")
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("derive-rules", help="derive bypass rules from an access-log CSV")
    d.add_argument("--log", required=True)
    d.add_argument("--window", type=float, default=300.0)
    d.add_argument("--threshold", type=float, default=0.8)
    d.add_argument("--min-samples", type=int, default=10)
    d.add_argument("--now", type=float, help="derivation time (default: last log record)")
    d.add_argument("--tenant", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_derive_rules)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)

    rp = sub.add_parser("report", help="re-emit a report as json or csv")
    rp.add_argument("--report", required=True)
    rp.add_argument("--format", choices=["json", "csv"], default="json")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    level = os.environ.get("CACHEPEER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except NoPeeringDefined as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:  # scenario parse errors carry line/column
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

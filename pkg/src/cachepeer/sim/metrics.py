"""Aggregation of a finished run into a MetricsReport and its CSV/JSON outputs."""
from __future__ import annotations

import csv
import io
import json
import os

import numpy as np

from ..peering import symmetry_ratio

SERVED = ("local", "peer", "origin", "origin-bypassed")
TRACE_FIELDS = ["time", "tenant", "objectKey", "servedBy", "latencyMs", "viTraversals"]
ICP_FIELDS = ["time", "kind", "requestId", "sender", "contentKey", "verdict"]


def _ratio(num, den):
    return num / den if den else None


def _summarize(records):
    served = {k: 0 for k in SERVED}
    for r in records:
        served[r.served_by.value] += 1
    n = len(records)
    intercepted = n - served["origin-bypassed"]
    lat = np.array([r.latency_ms for r in records], dtype=np.float64)
    vi = np.array([r.vi_traversals for r in records], dtype=np.float64)
    return {
        "requests": n,
        "served": served,
        "intercepted": intercepted,
        # hit ratios are relative to requests that reached a vCache
        "hit_ratio": {
            "local": _ratio(served["local"], intercepted),
            "peer": _ratio(served["peer"], intercepted),
            "combined": _ratio(served["local"] + served["peer"], intercepted),
        },
        "latency_ms": {
            "mean": float(lat.mean()) if n else None,
            "median": float(np.median(lat)) if n else None,
            "p95": float(np.percentile(lat, 95)) if n else None,
        },
        "mean_vi_traversals": float(vi.mean()) if n else None,
        "wan_bytes": int(sum(r.size for r in records if r.served_by.value in ("origin", "origin-bypassed"))),
        "peering_bytes": int(sum(r.size for r in records if r.served_by.value == "peer")),
    }


def build_report(result):
    cfg = result.config
    overhead = cfg.request_overhead
    measured = [r for r in result.records if r.issued_at >= cfg.warmup]
    glob = _summarize(measured)
    if overhead:
        glob["wan_bytes"] += overhead * (glob["served"]["origin"] + glob["served"]["origin-bypassed"])
    tenants = {}
    for t in cfg.tenants:
        recs = [r for r in measured if r.tenant == t.id]
        s = _summarize(recs)
        if overhead:
            s["wan_bytes"] += overhead * (s["served"]["origin"] + s["served"]["origin-bypassed"])
        s["rule_lookups"] = result.counters["rule_lookups"][t.id]
        s["bypass_rules"] = len(result.rule_tables[t.id])
        tenants[str(t.id)] = s

    links = []
    inter_tenant = 0
    for link in result.links:
        acc = {str(c): link.accounting[c].as_dict() for c in link.caches}
        sym = {}
        for c in link.caches:
            r = symmetry_ratio(link.accounting[c])
            sym[str(c)] = "undefined" if r is None else r
        inter_tenant += sum(link.accounting[c].bytes_served_to_peer for c in link.caches)
        links.append({
            "caches": list(link.caches),
            "network": link.shared_network,
            "state": link.state.value,
            "accounting": acc,
            "symmetry_ratio": sym,
        })
    attack = dict(result.counters["attack"])
    inter_tenant += attack["bytes_served"]
    c = result.counters
    return {
        "scenario": {
            "seed": cfg.seed,
            "duration": cfg.duration,
            "warmup": cfg.warmup,
            "peering_enabled": result.peering_enabled,
        },
        "global": glob,
        "tenants": tenants,
        "peering": {
            "links": links,
            "inter_tenant_bytes": inter_tenant,
            "icp": {
                "queries": c["icp_queries"], "hits": c["icp_hits"], "misses": c["icp_misses"],
                "timeouts": c["icp_timeouts"], "digest_false_hits": c["digest_false_hits"],
                "evicted_since_hit": c["evicted_since_hit"],
            },
        },
        "malicious": attack,
        "interception": {
            "enabled": cfg.interception.enabled,
            "derivations": c["rule_derivations"],
            "bypass_destinations": {str(t): sorted(tbl.bypassed()) for t, tbl in sorted(result.rule_tables.items())},
        },
        "totals": {
            "arrivals": c["arrivals"],
            "records": len(result.records),
            "events": c["events"],
            "digest_rebuilds": c["digest_rebuilds"],
        },
    }


def dumps_report(report):
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def trace_csv(records):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRACE_FIELDS)
    for r in records:
        w.writerow([repr(r.issued_at), r.tenant, r.content.key, r.served_by.value,
                    repr(r.latency_ms), r.vi_traversals])
    return out.getvalue()


def icp_trace_csv(rows):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(ICP_FIELDS)
    for t, kind, rid, sender, key, verdict in rows:
        w.writerow([repr(t), kind, rid, sender, key, verdict])
    return out.getvalue()


def report_csv(report):
    """Flat per-tenant table of the headline metrics."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["scope", "requests", "local", "peer", "origin", "origin_bypassed",
                "hit_local", "hit_peer", "hit_combined", "latency_mean_ms", "latency_median_ms",
                "latency_p95_ms", "mean_vi", "wan_bytes", "peering_bytes"])
    scopes = [("global", report["global"])] + [("tenant:" + k, v) for k, v in sorted(report["tenants"].items())]
    for name, s in scopes:
        h, lat = s["hit_ratio"], s["latency_ms"]
        w.writerow([name, s["requests"], s["served"]["local"], s["served"]["peer"], s["served"]["origin"],
                    s["served"]["origin-bypassed"], h["local"], h["peer"], h["combined"],
                    lat["mean"], lat["median"], lat["p95"], s["mean_vi_traversals"],
                    s["wan_bytes"], s["peering_bytes"]])
    return out.getvalue()


def write_outputs(result, out_dir, fmt="json"):
    """Write report, request trace, ICP trace and per-cache access logs; returns the report."""
    os.makedirs(out_dir, exist_ok=True)
    report = build_report(result)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_report(report))
    if fmt == "csv":
        with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report_csv(report))
    with open(os.path.join(out_dir, "trace.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(trace_csv(result.records))
    with open(os.path.join(out_dir, "icp_trace.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(icp_trace_csv(result.icp_trace))
    for cid in sorted(result.caches):
        path = os.path.join(out_dir, "access_log_cache%d.csv" % cid)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            result.caches[cid].log.to_csv(fh)
    return report

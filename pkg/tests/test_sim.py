import pytest

from cachepeer.cache import Outcome
from cachepeer.sim import run, validate_config
from cachepeer.sim.engine import ServedBy
from cachepeer.sim.metrics import build_report, dumps_report, trace_csv
from conftest import single_tenant_scenario, two_tenant_scenario

# hand-computed leg latencies (ms) for the conftest link table
ACCESS, BACKHAUL, INTRA, FABRIC, DIRECT, WAN, PROC = 1.0, 0.5, 0.05, 0.1, 0.2, 40.0, 0.5
SER = 10_000 / 1.25e9 * 1000  # per-link serialization of one object

USER_CACHE = ACCESS + BACKHAUL + INTRA + FABRIC + 3 * INTRA  # 7 links
CACHE_ORIGIN = 3 * INTRA + FABRIC + INTRA + WAN  # 6 links
CACHE_CACHE = 6 * INTRA + DIRECT  # 7 links over the shared network

HIT = USER_CACHE + PROC + USER_CACHE + 7 * SER
ORIGIN = USER_CACHE + PROC + 2 * CACHE_ORIGIN + 6 * SER + USER_CACHE + 7 * SER
ICP_RTT = CACHE_CACHE + PROC + CACHE_CACHE
PEER = (USER_CACHE + PROC + ICP_RTT + CACHE_CACHE + PROC + CACHE_CACHE + 7 * SER
        + USER_CACHE + 7 * SER)
BYPASS = ACCESS + BACKHAUL + WAN + ACCESS + BACKHAUL + WAN + 3 * SER


def test_closed_form_constants_are_sane():
    assert PEER < ORIGIN
    assert HIT < PEER


def test_per_request_latency_matches_closed_form():
    res = run(two_tenant_scenario())
    seen = {s: 0 for s in ServedBy}
    origin_after_icp = 0
    for r in res.records:
        seen[r.served_by] += 1
        if r.served_by == ServedBy.LOCAL:
            assert r.latency_ms == pytest.approx(HIT, abs=1e-6)
            assert r.vi_traversals == 2
        elif r.served_by == ServedBy.PEER:
            assert r.latency_ms == pytest.approx(PEER, abs=1e-6)
            assert r.latency_ms < ORIGIN
            assert r.vi_traversals == 2
        else:
            assert r.served_by == ServedBy.ORIGIN
            assert r.vi_traversals == 4
            if r.latency_ms == pytest.approx(ORIGIN + ICP_RTT, abs=1e-6):
                origin_after_icp += 1
            else:
                assert r.latency_ms == pytest.approx(ORIGIN, abs=1e-6)
    assert seen[ServedBy.PEER] > 0 and seen[ServedBy.LOCAL] > 0 and seen[ServedBy.ORIGIN] > 0
    # every origin fetch that waited on an ICP round trip was a digest false hit
    assert origin_after_icp == res.counters["digest_false_hits"] == res.counters["icp_misses"]
    assert res.counters["icp_timeouts"] == 0


def test_no_peering_miss_crosses_vi_four_times():
    res = run(single_tenant_scenario(duration=1.0))
    misses = [r for r in res.records if r.served_by == ServedBy.ORIGIN]
    assert misses and all(r.vi_traversals == 4 for r in misses)
    assert all(r.latency_ms == pytest.approx(ORIGIN, abs=1e-6) for r in misses)


def test_bypassed_request_latency():
    cfg = single_tenant_scenario(duration=3.0)
    cfg["tenants"][0]["personalized_fraction"] = 1.0
    cfg["interception"] = {"enabled": True, "period": 1.0, "window": 1.0, "min_samples": 10}
    res = run(cfg)
    byp = [r for r in res.records if r.served_by == ServedBy.ORIGIN_BYPASSED]
    assert byp
    assert all(r.latency_ms == pytest.approx(BYPASS, abs=1e-6) and r.vi_traversals == 2 for r in byp)


def test_zero_duration_gives_empty_report():
    rep = build_report(run(single_tenant_scenario(duration=0.0)))
    assert rep["global"]["requests"] == 0
    assert rep["global"]["latency_ms"]["mean"] is None
    assert rep["global"]["hit_ratio"]["combined"] is None
    dumps_report(rep)  # serializable


def test_same_config_same_output():
    a, b = run(two_tenant_scenario(duration=5.0)), run(two_tenant_scenario(duration=5.0))
    assert trace_csv(a.records) == trace_csv(b.records)
    assert dumps_report(build_report(a)) == dumps_report(build_report(b))
    c = run(two_tenant_scenario(duration=5.0, seed=12))
    assert trace_csv(a.records) != trace_csv(c.records)


def test_paired_runs_save_latency_and_wan():
    cfg = two_tenant_scenario()
    on, off = build_report(run(cfg)), build_report(run(cfg, peering=False))
    assert on["global"]["requests"] == off["global"]["requests"]
    assert on["global"]["latency_ms"]["mean"] < off["global"]["latency_ms"]["mean"]
    assert on["global"]["wan_bytes"] < off["global"]["wan_bytes"]
    assert on["global"]["peering_bytes"] > 0
    assert off["peering"]["inter_tenant_bytes"] == 0
    assert off["global"]["served"]["peer"] == 0


def test_accounting_reconciles():
    cfg = two_tenant_scenario(request_overhead=300)
    res = run(cfg)
    rep = build_report(res)
    g = rep["global"]
    assert sum(g["served"].values()) == g["requests"] == len(res.records) == res.counters["arrivals"]
    assert sorted(r.id for r in res.records) == list(range(len(res.records)))
    for t in (0, 1):
        origin = [r for r in res.records if r.tenant == t and r.served_by in (ServedBy.ORIGIN, ServedBy.ORIGIN_BYPASSED)]
        assert res.counters["wan_bytes"][t] == sum(r.size + 300 for r in origin)
        assert rep["tenants"][str(t)]["wan_bytes"] == res.counters["wan_bytes"][t]
    transferred = sum(size for _, _, _, size in res.transfers)
    link = res.links[0]
    served = sum(link.accounting[c].bytes_served_to_peer for c in link.caches)
    fetched = sum(link.accounting[c].bytes_fetched_from_peer for c in link.caches)
    assert transferred == served == fetched == g["peering_bytes"]
    assert rep["peering"]["inter_tenant_bytes"] == served


def test_mirror_scenario_is_symmetric():
    res = run(two_tenant_scenario(duration=40.0))
    assert len(res.records) >= 10_000
    link = res.links[0]
    for c in link.caches:
        ratio = link.accounting[c].bytes_served_to_peer / link.accounting[c].bytes_fetched_from_peer
        assert 0.9 <= ratio <= 1.1


def _interception_scenario(enabled):
    cfg = single_tenant_scenario(duration=30.0, seed=5)
    cfg["tenants"][0].update({"personalized_fraction": 0.3, "personalized_destinations": 2,
                              "rate": 300.0})
    cfg["interception"] = {"enabled": enabled, "period": 5.0, "window": 5.0, "min_samples": 20,
                           "threshold": 0.8}
    return cfg


def test_bypassed_flows_never_reach_the_cache():
    res = run(_interception_scenario(True))
    bypassed = [r for r in res.records if r.served_by == ServedBy.ORIGIN_BYPASSED]
    assert bypassed
    logged = {rec.content for c in res.caches.values() for rec in c.log}
    assert not any(r.content in logged for r in bypassed)
    assert not any(rec.outcome == Outcome.BYPASSED for c in res.caches.values() for rec in c.log)
    assert res.rule_tables[0].bypassed() == {10, 11}


def test_interception_tradeoff():
    on, off = run(_interception_scenario(True)), run(_interception_scenario(False))

    def personal_mean(res):
        lat = [r.latency_ms for r in res.records if not r.cacheable]
        return sum(lat) / len(lat)

    assert personal_mean(on) < personal_mean(off)
    hits_on = sum(r.served_by == ServedBy.LOCAL for r in on.records)
    hits_off = sum(r.served_by == ServedBy.LOCAL for r in off.records)
    # only cacheable destinations could lose hits, and none of them is bypassed
    false_bypass = sum(1 for r in on.records
                       if r.served_by == ServedBy.ORIGIN_BYPASSED and r.cacheable)
    assert false_bypass == 0
    assert abs(hits_on - hits_off) <= max(false_bypass, 0.01 * hits_off)


# validation -------------------------------------------------------------

def test_valid_config_has_no_violations():
    assert validate_config(two_tenant_scenario()) == []


def test_dangling_cache_in_peering_link():
    cfg = two_tenant_scenario()
    cfg["peering"]["links"][0]["caches"] = [0, 7]
    errors = [v for v in validate_config(cfg) if v.severity == "error"]
    assert any("7" in v.message and v.path.startswith("peering.links[0]") for v in errors)


def test_slow_shared_network_warns():
    cfg = two_tenant_scenario()
    cfg["topology"]["links"]["direct"]["latency_ms"] = 50.0
    vs = validate_config(cfg)
    assert [v.severity for v in vs] == ["warning"]
    assert "WAN" in vs[0].message

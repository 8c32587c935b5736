import copy

import pytest

# one-way link latencies (ms) chosen so the peer round trip is exactly 1 ms
# (6 intra-host hops + 1 direct hop each way) against an 80 ms WAN round trip
FAST_LINKS = {
    "access": {"latency_ms": 1.0, "bandwidth": 1.25e9},
    "backhaul": {"latency_ms": 0.5, "bandwidth": 1.25e9},
    "wan": {"latency_ms": 40.0, "bandwidth": 1.25e9},
    "fabric": {"latency_ms": 0.1, "bandwidth": 1.25e9},
    "intra_host": {"latency_ms": 0.05, "bandwidth": 1.25e9},
    "direct": {"latency_ms": 0.2, "bandwidth": 1.25e9},
}


def two_tenant_scenario(**over):
    """Two tenants, one cache each on separate hosts, peering over shared network 0."""
    base = {
        "seed": 11,
        "duration": 20.0,
        "object_size": 10_000,
        "topology": {"hosts": [0, 1], "links": copy.deepcopy(FAST_LINKS)},
        "tenants": [
            {"id": 0, "vlan": 100, "catalog_size": 500, "zipf_alpha": 0.8, "rate": 200.0,
             "overlap": {"peer": 1, "fraction": 1.0}},
            {"id": 1, "vlan": 200, "catalog_size": 500, "zipf_alpha": 0.8, "rate": 200.0,
             "overlap": {"peer": 0, "fraction": 1.0}},
        ],
        "caches": [
            {"id": 0, "tenant": 0, "host": 0, "capacity": 500_000, "prefill": True},
            {"id": 1, "tenant": 1, "host": 1, "capacity": 500_000, "prefill": True},
        ],
        "shared_networks": [{"id": 0, "owner": 0, "granted": [1], "attached": [0, 1]}],
        "peering": {"links": [{"caches": [0, 1], "network": 0}], "digest_period": 5.0},
    }
    base.update(over)
    return base


def single_tenant_scenario(**over):
    base = {
        "seed": 3,
        "duration": 10.0,
        "object_size": 10_000,
        "topology": {"hosts": [0], "links": copy.deepcopy(FAST_LINKS)},
        "tenants": [{"id": 0, "vlan": 100, "catalog_size": 300, "zipf_alpha": 0.8, "rate": 1000.0}],
        "caches": [{"id": 0, "tenant": 0, "host": 0, "capacity": 300_000}],
    }
    base.update(over)
    return base


@pytest.fixture
def two_tenants():
    return two_tenant_scenario()


@pytest.fixture
def single_tenant():
    return single_tenant_scenario()


# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    def record(label, ok, detail=""):
        ACCEPTANCE_LINES.append("%s %s%s" % ("PASS" if ok else "FAIL", label,
                                             " (%s)" % detail if detail else ""))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

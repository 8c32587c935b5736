import itertools

import pytest

from cachepeer.errors import AlreadyAttached, NoPath, NotGranted, NotOwner
from cachepeer.topology import LinkKind, LinkParams, NodeKind, build_topology


def zero_links(wan=40.0):
    z = LinkParams(0.0, 1e9)
    return {"access": z, "backhaul": z, "fabric": z, "intra_host": z, "direct": z,
            "wan": LinkParams(wan, 1e9)}


@pytest.fixture
def topo():
    # tenants 0,1,2; caches 0 (t0) and 1 (t1) co-hosted on host 0, cache 2 (t1) on host 1,
    # cache 3 (t2) on host 1
    t = build_topology([0, 1], {0: 100, 1: 200, 2: 300},
                       {0: (0, 0), 1: (1, 0), 2: (1, 1), 3: (2, 1)}, zero_links())
    t.create_shared_network(7, owner=0)
    return t


def test_bypass_path_is_one_wan_link(topo):
    p = topo.compute_path(topo.user_node[0], topo.origin, vlan=100)
    assert p.latency == 40.0
    assert sum(1 for l in p.links if l.kind == LinkKind.WAN) == 1


def test_miss_without_peering_crosses_vi_four_times(topo):
    user, cache, origin = topo.user_node[0], topo.cache_node[0], topo.origin
    legs = [(user, cache), (cache, origin), (origin, cache), (cache, user)]
    total = sum(topo.compute_path(a, b, vlan=100).vi_traversals for a, b in legs)
    assert total == 4


def test_local_hit_crosses_vi_twice(topo):
    user, cache = topo.user_node[0], topo.cache_node[0]
    total = (topo.compute_path(user, cache, vlan=100).vi_traversals
             + topo.compute_path(cache, user, vlan=100).vi_traversals)
    assert total == 2


def test_cross_tenant_without_shared_network_is_nopath(topo):
    with pytest.raises(NoPath):
        topo.compute_path(topo.user_node[0], topo.cache_node[1], vlan=100)
    with pytest.raises(NoPath):
        topo.compute_path(topo.user_node[0], topo.cache_node[1], vlan=200)
    with pytest.raises(NoPath):
        topo.compute_path(topo.cache_node[0], topo.cache_node[1], shared_network=7)


def test_isolation_exhaustive(topo):
    """Every endpoint pair of distinct tenants is unreachable inside any VLAN."""
    endpoints = [(n.id, n.tenant) for n in topo.nodes.values()
                 if n.kind in (NodeKind.USER, NodeKind.CACHE)]
    for (a, ta), (b, tb) in itertools.permutations(endpoints, 2):
        if ta == tb:
            continue
        for vlan in topo.vlan_segments:
            with pytest.raises(NoPath):
                topo.compute_path(a, b, vlan=vlan)


def test_grant_and_idempotence(topo):
    topo.grant_network_access(7, grantor=0, grantee=1)
    assert topo.shared_networks[7].granted == {1}
    topo.grant_network_access(7, grantor=0, grantee=1)
    assert topo.shared_networks[7].granted == {1}


def test_non_owner_cannot_grant(topo):
    with pytest.raises(NotOwner):
        topo.grant_network_access(7, grantor=1, grantee=2)


def test_attach_rules(topo):
    topo.attach_cache(7, 0)
    assert topo.shared_networks[7].attached == {0}
    with pytest.raises(NotGranted):
        topo.attach_cache(7, 3)
    with pytest.raises(AlreadyAttached):
        topo.attach_cache(7, 0)


def test_co_hosted_peering_only_traverses_br_int(topo):
    topo.grant_network_access(7, 0, 1)
    topo.attach_cache(7, 0)
    topo.attach_cache(7, 1)
    p = topo.compute_path(topo.cache_node[0], topo.cache_node[1], shared_network=7)
    kinds = p.switch_kinds(topo)
    # the per-VM security bridges frame the single integration bridge
    assert [k for k in kinds if k != NodeKind.SECURITY_BRIDGE] == [NodeKind.INTEGRATION_BRIDGE]
    assert all(l.kind == LinkKind.INTRA_HOST for l in p.links)
    assert p.vi_traversals == 0


def test_different_hosts_use_direct_vlan_bridge_link(topo):
    topo.grant_network_access(7, 0, 1)
    topo.attach_cache(7, 0)
    topo.attach_cache(7, 2)
    p = topo.compute_path(topo.cache_node[0], topo.cache_node[2], shared_network=7)
    inter = [l for l in p.links if l.kind == LinkKind.INTER_HOST]
    assert len(inter) == 1 and inter[0].shortcut
    ends = {topo.nodes[n].kind for n in inter[0].endpoints}
    assert ends == {NodeKind.VLAN_BRIDGE}
    assert not any(l.kind == LinkKind.WAN for l in p.links)


def test_shared_path_requires_attachment_of_both(topo):
    topo.grant_network_access(7, 0, 1)
    topo.attach_cache(7, 0)
    with pytest.raises(NoPath):
        topo.compute_path(topo.cache_node[0], topo.cache_node[2], shared_network=7)


def test_latency_adds_switch_delay_and_serialization():
    t = build_topology([0], {0: 100}, {0: (0, 0)},
                       {"access": LinkParams(1.0, 1000.0), "backhaul": LinkParams(1.0, 1000.0),
                        "wan": LinkParams(40.0, 1000.0), "fabric": LinkParams(1.0, 1000.0),
                        "intra_host": LinkParams(0.5, 1000.0), "direct": LinkParams(1.0, 1000.0)},
                       switch_delay_ms=0.25)
    p = t.compute_path(t.user_node[0], t.origin, vlan=100, size=100)
    # user-edge, edge-br-ex, br-ex-origin; two switches in between; 100 B at 1000 B/s = 100 ms per link
    assert p.latency == pytest.approx(1.0 + 1.0 + 40.0 + 2 * 0.25 + 3 * 100.0)


def test_round_trips_have_even_traversals(topo):
    users = topo.user_node
    for tenant, vlan in [(0, 100), (1, 200), (2, 300)]:
        for c, ct in topo.cache_tenant.items():
            if ct != tenant:
                continue
            cn = topo.cache_node[c]
            trip = [(users[tenant], cn), (cn, topo.origin), (topo.origin, cn), (cn, users[tenant])]
            assert sum(topo.compute_path(a, b, vlan=vlan).vi_traversals for a, b in trip) % 2 == 0


def test_check_flags_slow_intra_host_links():
    links = zero_links()
    links["intra_host"] = LinkParams(5.0, 1e9)
    t = build_topology([0], {0: 100}, {0: (0, 0)}, links)
    assert any("intra-host" in p for p in t.check())


def test_duplicate_vlan_rejected():
    with pytest.raises(ValueError):
        build_topology([0], {0: 100, 1: 100}, {}, zero_links())

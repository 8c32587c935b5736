"""Micro data-center topology: switch fabric, tenant VLANs and shared peering networks.

The fabric is a fixed tree::

    user(t) --access-- edge --backhaul-- br-ex --wan-- origin
                                           |
                                     br-int (network node)
                                           |            (one per compute host)
                                       br-vlan(h) --intra-- br-int(h) --intra-- qbr(c) --intra-- cache(c)

plus direct ``br-vlan(h1) -- br-vlan(h2)`` links that only shared-network
flows may use. The external bridge is the boundary of the virtualized
infrastructure: every time a path passes through it counts as one traversal.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .errors import AlreadyAttached, NoPath, NotGranted, NotOwner


class NodeKind(str, Enum):
    EDGE = "edge"
    SECURITY_BRIDGE = "security-bridge"
    INTEGRATION_BRIDGE = "integration-bridge"
    VLAN_BRIDGE = "vlan-bridge"
    EXTERNAL_BRIDGE = "external-bridge"
    USER = "user"
    ORIGIN = "origin"
    CACHE = "cache"


SWITCH_KINDS = frozenset({
    NodeKind.EDGE, NodeKind.SECURITY_BRIDGE, NodeKind.INTEGRATION_BRIDGE,
    NodeKind.VLAN_BRIDGE, NodeKind.EXTERNAL_BRIDGE,
})


class LinkKind(str, Enum):
    INTRA_HOST = "intra-host"
    INTER_HOST = "inter-host"
    BACKHAUL = "backhaul"
    WAN = "wan"


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    name: str
    tenant: int | None = None
    host: int | None = None

    @property
    def is_switch(self):
        return self.kind in SWITCH_KINDS


@dataclass(frozen=True)
class Link:
    endpoints: tuple[int, int]
    latency: float  # ms
    bandwidth: float  # bytes/s
    kind: LinkKind
    shortcut: bool = False  # usable only by shared-network flows

    def serialization_ms(self, size):
        return 1000.0 * size / self.bandwidth


@dataclass(frozen=True)
class LinkParams:
    latency: float
    bandwidth: float


DEFAULT_LINKS = {
    "access": LinkParams(2.0, 12.5e6),
    "backhaul": LinkParams(1.0, 125e6),
    "wan": LinkParams(40.0, 12.5e6),
    "fabric": LinkParams(0.1, 1.25e9),
    "intra_host": LinkParams(0.01, 1.25e9),
    "direct": LinkParams(0.2, 1.25e9),
}


@dataclass(frozen=True)
class PathResult:
    nodes: tuple[int, ...]
    links: tuple[Link, ...]
    latency: float  # ms, includes serialization when a size was given
    vi_traversals: int

    def switch_kinds(self, topology):
        return [topology.nodes[n].kind for n in self.nodes[1:-1]]


@dataclass
class SharedNetwork:
    id: int
    owner: int
    granted: set[int] = field(default_factory=set)
    attached: set[int] = field(default_factory=set)

    def admits(self, tenant):
        return tenant == self.owner or tenant in self.granted


class MicroDcTopology:
    """Node/link graph of one micro data center plus its tenant bookkeeping.

    Built once per scenario by :func:`build_topology`; afterwards only
    :meth:`grant_network_access`, :meth:`attach_cache` and
    :meth:`create_shared_network` mutate it.
    """

    def __init__(self, switch_delay_ms=0.0):
        self.switch_delay_ms = switch_delay_ms
        self.nodes: dict[int, Node] = {}
        self.links: list[Link] = []
        self._adj: dict[int, list[tuple[int, Link]]] = {}
        self.hosts: dict[int, set[int]] = {}  # host -> cache ids
        self.vlan_segments: dict[int, int] = {}  # vlan -> tenant
        self.shared_networks: dict[int, SharedNetwork] = {}
        self.cache_tenant: dict[int, int] = {}
        self.cache_host: dict[int, int] = {}
        self.cache_node: dict[int, int] = {}
        self.user_node: dict[int, int] = {}
        self._node_cache: dict[int, int] = {}  # vm and qbr node -> cache id
        self.origin: int | None = None
        self.external_bridge: int | None = None
        self._paths: dict[tuple, tuple] = {}

    # construction -----------------------------------------------------

    def add_node(self, kind, name, tenant=None, host=None):
        nid = len(self.nodes)
        self.nodes[nid] = Node(nid, kind, name, tenant, host)
        self._adj[nid] = []
        return nid

    def add_link(self, a, b, params, kind, shortcut=False):
        link = Link((a, b), params.latency, params.bandwidth, kind, shortcut)
        self.links.append(link)
        self._adj[a].append((b, link))
        self._adj[b].append((a, link))
        self._paths.clear()
        return link

    def tenant_of_vlan(self, vlan):
        return self.vlan_segments[vlan]

    def vlan_of_tenant(self, tenant):
        for vlan, t in self.vlan_segments.items():
            if t == tenant:
                return vlan
        raise KeyError(tenant)

    # shared networks --------------------------------------------------

    def create_shared_network(self, network, owner):
        if network in self.shared_networks:
            raise ValueError("shared network %r already exists" % network)
        self.shared_networks[network] = SharedNetwork(network, owner)
        return self.shared_networks[network]

    def grant_network_access(self, network, grantor, grantee):
        net = self.shared_networks[network]
        if grantor != net.owner:
            raise NotOwner("tenant %d does not own network %d" % (grantor, network))
        if grantee != net.owner:
            net.granted.add(grantee)
        self._paths.clear()
        return self

    def attach_cache(self, network, cache):
        net = self.shared_networks[network]
        tenant = self.cache_tenant[cache]
        if not net.admits(tenant):
            raise NotGranted("tenant %d has no access to network %d" % (tenant, network))
        if cache in net.attached:
            raise AlreadyAttached("cache %d already on network %d" % (cache, network))
        net.attached.add(cache)
        self._paths.clear()
        return self

    # paths ------------------------------------------------------------

    def _admitted_vlan(self, vlan, nid):
        tenant = self.vlan_segments.get(vlan)
        if tenant is None:
            return False
        node = self.nodes[nid]
        if node.kind in (NodeKind.USER, NodeKind.CACHE):
            return node.tenant == tenant
        return True

    def _admitted_shared(self, net, nid):
        node = self.nodes[nid]
        if node.kind in (NodeKind.CACHE, NodeKind.SECURITY_BRIDGE):
            # a per-VM security bridge follows its VM
            return self._node_cache.get(nid) in net.attached
        return node.kind in (NodeKind.INTEGRATION_BRIDGE, NodeKind.VLAN_BRIDGE) and node.host is not None

    def _route(self, src, dst, vlan, shared_network):
        key = (src, dst, vlan, shared_network)
        hit = self._paths.get(key)
        if hit is not None:
            return hit
        if src not in self.nodes or dst not in self.nodes:
            raise NoPath("unknown endpoint")
        if shared_network is not None:
            net = self.shared_networks.get(shared_network)
            if net is None:
                raise NoPath("no shared network %r" % shared_network)
            admitted = lambda n: self._admitted_shared(net, n)  # noqa: E731
            use_shortcuts = True
        else:
            admitted = lambda n: self._admitted_vlan(vlan, n)  # noqa: E731
            use_shortcuts = False
        if not (admitted(src) and admitted(dst)):
            raise NoPath("flow %d -> %d not admitted" % (src, dst))
        # hop-count BFS; tree (+ full mesh of shortcuts) keeps the result unique
        prev = {src: None}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if u == dst:
                break
            for v, link in self._adj[u]:
                if v in prev or (link.shortcut and not use_shortcuts) or not admitted(v):
                    continue
                # user/origin/cache endpoints never forward transit traffic
                if v != dst and not self.nodes[v].is_switch:
                    continue
                prev[v] = (u, link)
                queue.append(v)
        if dst not in prev:
            raise NoPath("no path %d -> %d" % (src, dst))
        nodes, links = [dst], []
        cur = dst
        while prev[cur] is not None:
            u, link = prev[cur]
            links.append(link)
            nodes.append(u)
            cur = u
        nodes.reverse()
        links.reverse()
        route = (tuple(nodes), tuple(links))
        self._paths[key] = route
        return route

    def compute_path(self, src, dst, vlan=None, shared_network=None, size=0):
        """Path between two nodes inside a tenant VLAN or a shared network.

        ``size`` adds per-link serialization delay for a payload of that many
        bytes. Raises :class:`NoPath` when isolation forbids the flow.
        """
        if (vlan is None) == (shared_network is None):
            raise ValueError("exactly one of vlan / shared_network is required")
        nodes, links = self._route(src, dst, vlan, shared_network)
        interior = nodes[1:-1]
        latency = sum(l.latency for l in links)
        latency += self.switch_delay_ms * sum(1 for n in interior if self.nodes[n].is_switch)
        if size:
            latency += sum(l.serialization_ms(size) for l in links)
        vi = sum(1 for n in interior if n == self.external_bridge)
        return PathResult(nodes, links, latency, vi)

    def check(self):
        """Structural invariants; returns a list of problems (empty when valid)."""
        problems = []
        start = next(iter(self.nodes), None)
        if start is not None:
            stack = [start]
            seen = {start}
            while stack:
                u = stack.pop()
                for v, _ in self._adj[u]:
                    if v not in seen:
                        seen.add(v)
                        stack.append(v)
            if len(seen) != len(self.nodes):
                problems.append("topology graph is not connected")
        owners = {}
        for host, caches in self.hosts.items():
            for c in caches:
                if c in owners:
                    problems.append("cache %d on hosts %d and %d" % (c, owners[c], host))
                owners[c] = host
        intra = [l.latency for l in self.links if l.kind == LinkKind.INTRA_HOST]
        other = [l.latency for l in self.links if l.kind != LinkKind.INTRA_HOST]
        if intra and other and max(intra) > min(other):
            problems.append("intra-host links must have the smallest latency")
        for l in self.links:
            if l.bandwidth <= 0 or l.latency < 0:
                problems.append("link %s has invalid latency/bandwidth" % (l.endpoints,))
            if l.kind == LinkKind.WAN and self.external_bridge not in l.endpoints:
                problems.append("wan link %s does not touch the external bridge" % (l.endpoints,))
        return problems


def build_topology(hosts, tenants, caches, links=None, switch_delay_ms=0.0):
    """Build the standard tree.

    ``tenants`` maps tenant id -> VLAN id, ``caches`` maps cache id ->
    (tenant, host), ``links`` maps link class (see ``DEFAULT_LINKS``) to
    :class:`LinkParams`.
    """
    params = dict(DEFAULT_LINKS)
    params.update(links or {})
    topo = MicroDcTopology(switch_delay_ms)
    vlans = {}
    for tenant, vlan in tenants.items():
        if vlan in vlans:
            raise ValueError("VLAN %d assigned to tenants %d and %d" % (vlan, vlans[vlan], tenant))
        vlans[vlan] = tenant
    topo.vlan_segments = vlans

    topo.origin = topo.add_node(NodeKind.ORIGIN, "origin")
    edge = topo.add_node(NodeKind.EDGE, "edge")
    br_ex = topo.add_node(NodeKind.EXTERNAL_BRIDGE, "br-ex")
    topo.external_bridge = br_ex
    net_int = topo.add_node(NodeKind.INTEGRATION_BRIDGE, "br-int/net")
    topo.add_link(br_ex, topo.origin, params["wan"], LinkKind.WAN)
    topo.add_link(edge, br_ex, params["backhaul"], LinkKind.BACKHAUL)
    topo.add_link(br_ex, net_int, params["intra_host"], LinkKind.INTRA_HOST)
    for tenant in sorted(tenants):
        u = topo.add_node(NodeKind.USER, "user/t%d" % tenant, tenant=tenant)
        topo.user_node[tenant] = u
        topo.add_link(u, edge, params["access"], LinkKind.BACKHAUL)

    vlan_bridges = {}
    host_int = {}
    for host in sorted(set(hosts)):
        topo.hosts[host] = set()
        vb = topo.add_node(NodeKind.VLAN_BRIDGE, "br-vlan/h%d" % host, host=host)
        bi = topo.add_node(NodeKind.INTEGRATION_BRIDGE, "br-int/h%d" % host, host=host)
        topo.add_link(net_int, vb, params["fabric"], LinkKind.INTER_HOST)
        topo.add_link(vb, bi, params["intra_host"], LinkKind.INTRA_HOST)
        vlan_bridges[host] = vb
        host_int[host] = bi
    ordered = sorted(vlan_bridges)
    for i, h1 in enumerate(ordered):
        for h2 in ordered[i + 1:]:
            topo.add_link(vlan_bridges[h1], vlan_bridges[h2], params["direct"],
                          LinkKind.INTER_HOST, shortcut=True)

    for cache in sorted(caches):
        tenant, host = caches[cache]
        if host not in host_int:
            raise ValueError("cache %d placed on unknown host %d" % (cache, host))
        qbr = topo.add_node(NodeKind.SECURITY_BRIDGE, "qbr/c%d" % cache, tenant=tenant, host=host)
        vm = topo.add_node(NodeKind.CACHE, "vcache/c%d" % cache, tenant=tenant, host=host)
        topo.add_link(host_int[host], qbr, params["intra_host"], LinkKind.INTRA_HOST)
        topo.add_link(qbr, vm, params["intra_host"], LinkKind.INTRA_HOST)
        topo.hosts[host].add(cache)
        topo.cache_tenant[cache] = tenant
        topo.cache_host[cache] = host
        topo.cache_node[cache] = vm
        topo._node_cache[vm] = cache
        topo._node_cache[qbr] = cache
    return topo

"""Scenario configuration: schema, parsing and validation.

A scenario is a JSON document. Every problem found is reported as a
:class:`Violation` carrying a dotted path to the offending field, e.g.
``peering.links[0].caches[1]``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace

from ..errors import ConfigInvalid, NoPath
from ..topology import DEFAULT_LINKS, LinkParams, build_topology


@dataclass(frozen=True)
class Violation:
    path: str
    message: str
    severity: str = "error"

    def __str__(self):
        return "%s %s: %s" % (self.severity, self.path, self.message)


@dataclass(frozen=True)
class OverlapConfig:
    peer: int
    fraction: float


@dataclass(frozen=True)
class TenantConfig:
    id: int
    vlan: int
    catalog_size: int = 1000
    zipf_alpha: float = 0.8
    rate: float = 10.0
    personalized_fraction: float = 0.0
    personalized_destinations: int = 1
    overlap: OverlapConfig | None = None


@dataclass(frozen=True)
class DelayPoolConfig:
    aggregate: tuple[float, float] | None = None  # (capacity bytes, rate bytes/s)
    individual: tuple[float, float] | None = None


@dataclass(frozen=True)
class CacheConfig:
    id: int
    tenant: int
    host: int
    capacity: int
    prefill: bool = False
    digest_bits: int = 8192
    digest_hashes: int = 7
    delay_pool: DelayPoolConfig | None = None


@dataclass(frozen=True)
class SharedNetworkConfig:
    id: int
    owner: int
    granted: tuple[int, ...] = ()
    attached: tuple[int, ...] = ()


@dataclass(frozen=True)
class PeeringLinkConfig:
    caches: tuple[int, int]
    network: int
    offloader: int | None = None


@dataclass(frozen=True)
class PeeringConfig:
    enabled: bool = True
    links: tuple[PeeringLinkConfig, ...] = ()
    always_icp: bool = False
    read_through: bool = True
    digest_period: float = 60.0
    icp_timeout_factor: float = 4.0
    icp_timeout_min: float = 0.001


@dataclass(frozen=True)
class InterceptionConfig:
    enabled: bool = False
    window: float = 300.0
    min_samples: int = 10
    threshold: float = 0.8
    period: float = 300.0


@dataclass(frozen=True)
class AttackerConfig:
    cache: int
    target: int
    rate: float = 1.0
    spoof_as: int | None = None


@dataclass(frozen=True)
class TopologyConfig:
    hosts: tuple[int, ...] = (0,)
    switch_delay_ms: float = 0.0
    links: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    duration: float = 60.0
    warmup: float = 0.0
    object_size: int = 10_000
    request_overhead: int = 0
    processing_delay_ms: float = 0.5
    destinations: int = 10
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    tenants: tuple[TenantConfig, ...] = ()
    caches: tuple[CacheConfig, ...] = ()
    shared_networks: tuple[SharedNetworkConfig, ...] = ()
    peering: PeeringConfig = field(default_factory=PeeringConfig)
    interception: InterceptionConfig = field(default_factory=InterceptionConfig)
    attackers: tuple[AttackerConfig, ...] = ()

    def without_peering(self):
        """Same scenario with every peering link cleared (caches, seeds, workload untouched)."""
        return replace(self, peering=replace(self.peering, links=()))

    def with_seed(self, seed):
        return replace(self, seed=seed)

    def tenant(self, tid):
        for t in self.tenants:
            if t.id == tid:
                return t
        raise KeyError(tid)

    def cache(self, cid):
        for c in self.caches:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def build_topology(self):
        links = {name: LinkParams(*p) for name, p in self.topology.links.items()}
        topo = build_topology(
            self.topology.hosts,
            {t.id: t.vlan for t in self.tenants},
            {c.id: (c.tenant, c.host) for c in self.caches},
            links,
            self.topology.switch_delay_ms,
        )
        for net in self.shared_networks:
            topo.create_shared_network(net.id, net.owner)
            for g in net.granted:
                topo.grant_network_access(net.id, net.owner, g)
            for c in net.attached:
                topo.attach_cache(net.id, c)
        return topo


# parsing --------------------------------------------------------------

_MISSING = object()


class _Parser:
    def __init__(self):
        self.violations: list[Violation] = []

    def error(self, path, msg):
        self.violations.append(Violation(path, msg))

    def obj(self, value, path, allowed):
        if not isinstance(value, dict):
            self.error(path, "expected an object")
            return {}
        for key in value:
            if key not in allowed:
                self.error("%s.%s" % (path, key) if path else key, "unknown field")
        return value

    def get(self, d, key, kind, path, default=_MISSING, check=None, why=""):
        p = "%s.%s" % (path, key) if path else key
        if key not in d:
            if default is _MISSING:
                self.error(p, "required field missing")
                return None
            return default
        v = d[key]
        if v is None and default is None:
            return None
        ok = isinstance(v, kind) and not (kind is not bool and isinstance(v, bool))
        if kind is float and isinstance(v, int) and not isinstance(v, bool):
            v, ok = float(v), True
        if not ok:
            self.error(p, "expected %s, got %r" % (getattr(kind, "__name__", kind), v))
            return default if default is not _MISSING else None
        if check is not None and not check(v):
            self.error(p, why or "invalid value %r" % (v,))
            return default if default is not _MISSING else None
        return v

    def int_list(self, d, key, path, default=()):
        raw = self.get(d, key, list, path, list(default))
        out = []
        for i, v in enumerate(raw or []):
            if isinstance(v, int) and not isinstance(v, bool):
                out.append(v)
            else:
                self.error("%s.%s[%d]" % (path, key, i), "expected int, got %r" % (v,))
        return tuple(out)


def _nonneg(v):
    return v >= 0


def _pos(v):
    return v > 0


def _bucket(p, d, key, path):
    raw = d.get(key)
    if raw is None:
        return None
    bp = "%s.%s" % (path, key)
    raw = p.obj(raw, bp, {"capacity", "rate"})
    cap = p.get(raw, "capacity", float, bp, check=_pos, why="must be > 0")
    rate = p.get(raw, "rate", float, bp, check=_pos, why="must be > 0")
    if cap is None or rate is None:
        return None
    return (cap, rate)


def _parse(data):
    p = _Parser()
    top = p.obj(data, "", {
        "seed", "duration", "warmup", "object_size", "request_overhead", "processing_delay_ms",
        "destinations", "topology", "tenants", "caches", "shared_networks", "peering",
        "interception", "attackers", "name", "description",
    })
    seed = p.get(top, "seed", int, "", 0, lambda v: 0 <= v < 2 ** 64, "must fit in 64 bits unsigned")
    duration = p.get(top, "duration", float, "", 60.0, _nonneg, "must be >= 0")
    warmup = p.get(top, "warmup", float, "", 0.0, _nonneg, "must be >= 0")
    object_size = p.get(top, "object_size", int, "", 10_000, _pos, "must be > 0")
    overhead = p.get(top, "request_overhead", int, "", 0, _nonneg, "must be >= 0")
    proc = p.get(top, "processing_delay_ms", float, "", 0.5, _nonneg, "must be >= 0")
    destinations = p.get(top, "destinations", int, "", 10, _pos, "must be > 0")

    traw = p.obj(top.get("topology", {}), "topology", {"hosts", "switch_delay_ms", "links"})
    hosts = p.int_list(traw, "hosts", "topology", (0,))
    if not hosts:
        p.error("topology.hosts", "at least one compute host is required")
    switch_delay = p.get(traw, "switch_delay_ms", float, "topology", 0.0, _nonneg, "must be >= 0")
    links = {}
    lraw = p.obj(traw.get("links", {}), "topology.links", set(DEFAULT_LINKS))
    for name, spec in lraw.items():
        if name not in DEFAULT_LINKS:
            continue
        lp = "topology.links.%s" % name
        spec = p.obj(spec, lp, {"latency_ms", "bandwidth"})
        d = DEFAULT_LINKS[name]
        lat = p.get(spec, "latency_ms", float, lp, d.latency, _nonneg, "must be >= 0")
        bw = p.get(spec, "bandwidth", float, lp, d.bandwidth, _pos, "must be > 0")
        links[name] = (lat, bw)
    topology = TopologyConfig(hosts or (0,), switch_delay, links)

    tenants = []
    for i, raw in enumerate(p.get(top, "tenants", list, "", []) or []):
        tp = "tenants[%d]" % i
        raw = p.obj(raw, tp, {"id", "vlan", "catalog_size", "zipf_alpha", "rate",
                              "personalized_fraction", "personalized_destinations", "overlap"})
        overlap = None
        if raw.get("overlap") is not None:
            op = tp + ".overlap"
            oraw = p.obj(raw["overlap"], op, {"peer", "fraction"})
            peer = p.get(oraw, "peer", int, op)
            frac = p.get(oraw, "fraction", float, op, check=lambda v: 0 <= v <= 1, why="must be in [0, 1]")
            if peer is not None and frac is not None:
                overlap = OverlapConfig(peer, frac)
        tenants.append(TenantConfig(
            id=p.get(raw, "id", int, tp, check=_nonneg, why="must be >= 0"),
            vlan=p.get(raw, "vlan", int, tp, check=lambda v: 1 <= v <= 4094, why="must be in [1, 4094]"),
            catalog_size=p.get(raw, "catalog_size", int, tp, 1000, _pos, "must be >= 1"),
            zipf_alpha=p.get(raw, "zipf_alpha", float, tp, 0.8, _nonneg, "must be >= 0"),
            rate=p.get(raw, "rate", float, tp, 10.0, _nonneg, "must be >= 0"),
            personalized_fraction=p.get(raw, "personalized_fraction", float, tp, 0.0,
                                        lambda v: 0 <= v <= 1, "must be in [0, 1]"),
            personalized_destinations=p.get(raw, "personalized_destinations", int, tp, 1, _pos,
                                            "must be >= 1"),
            overlap=overlap,
        ))

    caches = []
    for i, raw in enumerate(p.get(top, "caches", list, "", []) or []):
        cp = "caches[%d]" % i
        raw = p.obj(raw, cp, {"id", "tenant", "host", "capacity", "prefill", "digest_bits",
                              "digest_hashes", "delay_pool"})
        pool = None
        if raw.get("delay_pool") is not None:
            pp = cp + ".delay_pool"
            praw = p.obj(raw["delay_pool"], pp, {"aggregate", "individual"})
            pool = DelayPoolConfig(_bucket(p, praw, "aggregate", pp), _bucket(p, praw, "individual", pp))
        caches.append(CacheConfig(
            id=p.get(raw, "id", int, cp, check=_nonneg, why="must be >= 0"),
            tenant=p.get(raw, "tenant", int, cp),
            host=p.get(raw, "host", int, cp, 0),
            capacity=p.get(raw, "capacity", int, cp, check=_pos, why="must be > 0"),
            prefill=p.get(raw, "prefill", bool, cp, False),
            digest_bits=p.get(raw, "digest_bits", int, cp, 8192, _pos, "must be > 0"),
            digest_hashes=p.get(raw, "digest_hashes", int, cp, 7, _pos, "must be >= 1"),
            delay_pool=pool,
        ))

    nets = []
    for i, raw in enumerate(p.get(top, "shared_networks", list, "", []) or []):
        np_ = "shared_networks[%d]" % i
        raw = p.obj(raw, np_, {"id", "owner", "granted", "attached"})
        nets.append(SharedNetworkConfig(
            id=p.get(raw, "id", int, np_),
            owner=p.get(raw, "owner", int, np_),
            granted=p.int_list(raw, "granted", np_),
            attached=p.int_list(raw, "attached", np_),
        ))

    praw = p.obj(top.get("peering", {}), "peering", {
        "enabled", "links", "always_icp", "read_through", "digest_period",
        "icp_timeout_factor", "icp_timeout_min"})
    plinks = []
    for i, raw in enumerate(p.get(praw, "links", list, "peering", []) or []):
        lp = "peering.links[%d]" % i
        raw = p.obj(raw, lp, {"caches", "network", "offloader"})
        pair = p.int_list(raw, "caches", lp)
        if len(pair) != 2:
            p.error(lp + ".caches", "expected exactly two cache ids")
            pair = tuple(pair[:2]) + (-1,) * (2 - len(pair[:2]))
        plinks.append(PeeringLinkConfig(pair, p.get(raw, "network", int, lp),
                                        p.get(raw, "offloader", int, lp, None)))
    peering = PeeringConfig(
        enabled=p.get(praw, "enabled", bool, "peering", True),
        links=tuple(plinks),
        always_icp=p.get(praw, "always_icp", bool, "peering", False),
        read_through=p.get(praw, "read_through", bool, "peering", True),
        digest_period=p.get(praw, "digest_period", float, "peering", 60.0, _pos, "must be > 0"),
        icp_timeout_factor=p.get(praw, "icp_timeout_factor", float, "peering", 4.0, _pos, "must be > 0"),
        icp_timeout_min=p.get(praw, "icp_timeout_min", float, "peering", 0.001, _pos, "must be > 0"),
    )

    iraw = p.obj(top.get("interception", {}), "interception",
                 {"enabled", "window", "min_samples", "threshold", "period"})
    interception = InterceptionConfig(
        enabled=p.get(iraw, "enabled", bool, "interception", False),
        window=p.get(iraw, "window", float, "interception", 300.0, _pos, "must be > 0"),
        min_samples=p.get(iraw, "min_samples", int, "interception", 10, lambda v: v >= 1, "must be >= 1"),
        threshold=p.get(iraw, "threshold", float, "interception", 0.8, _nonneg, "must be >= 0"),
        period=p.get(iraw, "period", float, "interception", 300.0, _pos, "must be > 0"),
    )

    attackers = []
    for i, raw in enumerate(p.get(top, "attackers", list, "", []) or []):
        ap = "attackers[%d]" % i
        raw = p.obj(raw, ap, {"cache", "target", "rate", "spoof_as"})
        attackers.append(AttackerConfig(
            cache=p.get(raw, "cache", int, ap),
            target=p.get(raw, "target", int, ap),
            rate=p.get(raw, "rate", float, ap, 1.0, _nonneg, "must be >= 0"),
            spoof_as=p.get(raw, "spoof_as", int, ap, None),
        ))

    cfg = ScenarioConfig(
        seed=seed, duration=duration, warmup=warmup, object_size=object_size,
        request_overhead=overhead, processing_delay_ms=proc, destinations=destinations,
        topology=topology, tenants=tuple(tenants), caches=tuple(caches),
        shared_networks=tuple(nets), peering=peering, interception=interception,
        attackers=tuple(attackers),
    )
    return cfg, p.violations


def _semantic(cfg):
    out = []

    def err(path, msg):
        out.append(Violation(path, msg))

    tenants = {}
    vlans = {}
    for i, t in enumerate(cfg.tenants):
        if t.id in tenants:
            err("tenants[%d].id" % i, "duplicate tenant id %d" % t.id)
        tenants[t.id] = t
        if t.vlan in vlans:
            err("tenants[%d].vlan" % i, "VLAN %d already used by tenant %d" % (t.vlan, vlans[t.vlan]))
        vlans[t.vlan] = t.id
    for i, t in enumerate(cfg.tenants):
        if t.overlap is None:
            continue
        op = "tenants[%d].overlap" % i
        other = tenants.get(t.overlap.peer)
        if other is None:
            err(op + ".peer", "unknown tenant %d" % t.overlap.peer)
        elif other.id == t.id:
            err(op + ".peer", "a tenant cannot overlap with itself")
        elif other.overlap is None or other.overlap.peer != t.id or other.overlap.fraction != t.overlap.fraction:
            err(op, "overlap with tenant %d is not symmetric" % other.id)

    hosts = set(cfg.topology.hosts)
    if len(hosts) != len(cfg.topology.hosts):
        err("topology.hosts", "duplicate host id")
    caches = {}
    for i, c in enumerate(cfg.caches):
        cp = "caches[%d]" % i
        if c.id in caches:
            err(cp + ".id", "duplicate cache id %d" % c.id)
        caches[c.id] = c
        if c.tenant not in tenants:
            err(cp + ".tenant", "unknown tenant %d" % c.tenant)
        if c.host not in hosts:
            err(cp + ".host", "unknown host %d" % c.host)
        if c.capacity < cfg.object_size:
            err(cp + ".capacity", "smaller than object_size %d" % cfg.object_size)

    nets = {}
    for i, n in enumerate(cfg.shared_networks):
        np_ = "shared_networks[%d]" % i
        if n.id in nets:
            err(np_ + ".id", "duplicate shared network id %d" % n.id)
        nets[n.id] = n
        if n.owner not in tenants:
            err(np_ + ".owner", "unknown tenant %d" % n.owner)
        for j, g in enumerate(n.granted):
            if g not in tenants:
                err("%s.granted[%d]" % (np_, j), "unknown tenant %d" % g)
        seen = set()
        for j, c in enumerate(n.attached):
            ap = "%s.attached[%d]" % (np_, j)
            if c not in caches:
                err(ap, "unknown cache %d" % c)
                continue
            if c in seen:
                err(ap, "cache %d attached twice" % c)
            seen.add(c)
            tenant = caches[c].tenant
            if tenant != n.owner and tenant not in n.granted:
                err(ap, "tenant %d of cache %d has no access grant" % (tenant, c))

    for i, l in enumerate(cfg.peering.links):
        lp = "peering.links[%d]" % i
        for j, c in enumerate(l.caches):
            if c not in caches:
                err("%s.caches[%d]" % (lp, j), "unknown cache %d" % c)
        net = nets.get(l.network)
        if net is None:
            err(lp + ".network", "unknown shared network %s" % l.network)
        if all(c in caches for c in l.caches):
            a, b = (caches[c] for c in l.caches)
            if a.tenant == b.tenant:
                err(lp + ".caches", "peering needs caches of two different tenants")
            elif net is not None:
                for j, c in enumerate((a, b)):
                    if c.tenant != net.owner and c.tenant not in net.granted:
                        err("%s.caches[%d]" % (lp, j),
                            "tenant %d of cache %d not granted on network %d" % (c.tenant, c.id, net.id))
        if l.offloader is not None and l.offloader not in l.caches:
            err(lp + ".offloader", "offloader %d is not an end of this link" % l.offloader)
    pairs = [tuple(sorted(l.caches)) for l in cfg.peering.links]
    if len(set(pairs)) != len(pairs):
        err("peering.links", "duplicate peering link")

    for i, a in enumerate(cfg.attackers):
        ap = "attackers[%d]" % i
        if a.cache not in caches:
            err(ap + ".cache", "unknown cache %d" % a.cache)
        if a.target not in caches:
            err(ap + ".target", "unknown cache %d" % a.target)
    if cfg.warmup > cfg.duration:
        err("warmup", "warmup exceeds duration")
    return out


def _topology_checks(cfg):
    out = []
    try:
        topo = cfg.build_topology()
    except Exception as exc:  # reported, not raised
        return [Violation("topology", str(exc))], None
    for problem in topo.check():
        out.append(Violation("topology", problem))
    wan = cfg.topology.links.get("wan", (DEFAULT_LINKS["wan"].latency,))[0]
    for i, l in enumerate(cfg.peering.links):
        a, b = l.caches
        try:
            path = topo.compute_path(topo.cache_node[a], topo.cache_node[b], shared_network=l.network)
        except (NoPath, KeyError):
            continue  # attachment is added when the link is established
        if path.latency >= wan:
            out.append(Violation(
                "peering.links[%d]" % i,
                "shared-network latency %.3f ms >= WAN latency %.3f ms; peering cannot pay off"
                % (path.latency, wan), "warning"))
    return out, topo


def validate_config(data):
    """Return all violations (errors and link-quality warnings) for raw scenario data."""
    if isinstance(data, ScenarioConfig):
        cfg, violations = data, []
    else:
        cfg, violations = _parse(data)
    if violations:
        return violations
    violations = _semantic(cfg)
    if violations:
        return violations
    checks, _ = _topology_checks(cfg)
    return checks


def load_config(data):
    """Parse and validate; raises ConfigInvalid on any error-level violation."""
    if isinstance(data, ScenarioConfig):
        cfg = data
    else:
        cfg, violations = _parse(copy.deepcopy(data))
        if violations:
            raise ConfigInvalid(violations)
    errors = [v for v in validate_config(cfg) if v.severity == "error"]
    if errors:
        raise ConfigInvalid(errors)
    return cfg


def load_scenario_file(path):
    """Read a JSON scenario; JSON syntax errors raise ValueError with line/column."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError("%s: line %d column %d: %s" % (path, exc.lineno, exc.colno, exc.msg)) from None
    return data

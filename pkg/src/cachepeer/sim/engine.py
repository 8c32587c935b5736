"""Deterministic discrete-event simulation of the vCache request lifecycle.

A request is intercepted (or bypassed) at the tenant's integration bridge,
looked up in the tenant's vCache, then on a miss offered to each active
sibling (digest check, ICP confirmation, shaped peer fetch) before falling
back to the origin. Events run in (time, sequence) order; sequence numbers
are assigned at scheduling time, so a fixed seed gives a bit-identical run.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass
from enum import Enum

from ..cache import AccessLogRecord, ContentObject, Outcome, VCache
from ..errors import EvictedSinceHit, NoPath
from ..interception import Action, MissPredictorConfig, RuleTable, derive_rules
from ..peering import (DelayPool, IcpKind, IcpMessage, LinkState, establish_peering,
                       make_token, peer_fetch, receive_icp, FETCH_PORT, acl_check)
from .config import load_config
from .workload import make_rng, workloads_from_config

log = logging.getLogger(__name__)


class EventKind(int, Enum):
    REQUEST_ARRIVAL = 0
    CACHE_LOOKUP = 1
    ICP_DELIVERY = 2
    ICP_TIMEOUT = 3
    FETCH_DELIVERY = 4
    POOL_ADMISSION = 5
    TRANSFER_COMPLETION = 6
    DIGEST_REBUILD = 7
    RULE_DERIVATION = 8
    ATTACK = 9


class ServedBy(str, Enum):
    LOCAL = "local"
    PEER = "peer"
    ORIGIN = "origin"
    ORIGIN_BYPASSED = "origin-bypassed"


@dataclass(frozen=True)
class RequestRecord:
    id: int
    tenant: int
    content: object
    cacheable: bool
    size: int
    issued_at: float
    completed_at: float
    served_by: ServedBy
    vi_traversals: int
    latency_ms: float
    cache: int | None = None


class _Request:
    __slots__ = ("id", "tenant", "content", "cacheable", "size", "issued", "cache", "vlan",
                 "vi", "peers", "pending", "peer", "done", "offload")

    def __init__(self, rid, tenant, content, cacheable, size, issued, vlan):
        self.id = rid
        self.tenant = tenant
        self.content = content
        self.cacheable = cacheable
        self.size = size
        self.issued = issued
        self.vlan = vlan
        self.cache = None
        self.vi = 0
        self.peers = []
        self.pending = None
        self.peer = None
        self.done = False
        self.offload = False


@dataclass
class SimResult:
    config: object
    records: list
    icp_trace: list
    caches: dict
    links: list
    rule_tables: dict
    counters: dict
    peering_enabled: bool
    transfers: list

    def report(self):
        from .metrics import build_report
        return build_report(self)


class Simulation:
    def __init__(self, config, peering=True):
        cfg = load_config(config)
        if not peering:
            cfg = cfg.without_peering()
        self.cfg = cfg
        self.peering_enabled = peering and cfg.peering.enabled and bool(cfg.peering.links)
        self.topo = cfg.build_topology()
        self.proc_s = cfg.processing_delay_ms / 1000.0
        self.workloads = workloads_from_config(cfg)
        self.caches: dict[int, VCache] = {}
        for c in cfg.caches:
            pool = None
            if c.delay_pool is not None and (c.delay_pool.aggregate or c.delay_pool.individual):
                pool = DelayPool(c.delay_pool.aggregate, c.delay_pool.individual)
            self.caches[c.id] = VCache(c.id, c.tenant, c.host, c.capacity, c.digest_bits,
                                       c.digest_hashes, cfg.seed, pool)
        self.tenant_caches = {t.id: sorted(c.id for c in cfg.caches if c.tenant == t.id)
                              for t in cfg.tenants}
        self.links = []
        self.offloaders = set()
        if self.peering_enabled:
            for lc in cfg.peering.links:
                a, b = lc.caches
                link = establish_peering(self.topo, a, b, lc.network, cfg.seed, self.caches)
                self.links.append(link)
                if lc.offloader is not None:
                    self.offloaders.add(lc.offloader)
        self.rule_tables = {t.id: RuleTable(t.id) for t in cfg.tenants}
        self.predictor = MissPredictorConfig(cfg.interception.window, cfg.interception.min_samples,
                                             cfg.interception.threshold)
        self._heap = []
        self._seq = 0
        self._paths = {}
        self._next_rid = 0
        self._next_icp = 0
        self.records = []
        self.icp_trace = []
        self.transfers = []  # (admit time, server, requester, size)
        self.counters = {
            "arrivals": 0, "rule_lookups": {t.id: 0 for t in cfg.tenants},
            "icp_queries": 0, "icp_hits": 0, "icp_misses": 0, "icp_timeouts": 0,
            "digest_false_hits": 0, "evicted_since_hit": 0, "digest_rebuilds": 0,
            "rule_derivations": 0, "events": 0,
            "wan_bytes": {t.id: 0 for t in cfg.tenants},
            "attack": {"queries_sent": 0, "queries_answered": 0, "fetches_sent": 0,
                       "bytes_served": 0, "unreachable": 0, "dropped": 0},
        }

    # helpers ----------------------------------------------------------

    def schedule(self, t, kind, payload):
        heapq.heappush(self._heap, (t, self._seq, kind, payload))
        self._seq += 1

    def path(self, src, dst, vlan=None, net=None, size=0):
        key = (src, dst, vlan, net, size)
        p = self._paths.get(key)
        if p is None:
            p = self.topo.compute_path(src, dst, vlan=vlan, shared_network=net, size=size)
            self._paths[key] = p
        return p

    def _cache_path(self, a, b, net, size=0):
        return self.path(self.topo.cache_node[a], self.topo.cache_node[b], net=net, size=size)

    def _pick_cache(self, tenant, content):
        ids = self.tenant_caches.get(tenant)
        if not ids:
            return None
        if len(ids) == 1:
            return ids[0]
        return ids[sum(content.key.encode()) % len(ids)]

    def icp_timeout(self, link, me, peer):
        one_way = self._cache_path(me, peer, link.shared_network).latency / 1000.0 + self.proc_s
        return max(self.cfg.peering.icp_timeout_factor * 2 * one_way, self.cfg.peering.icp_timeout_min)

    # setup ------------------------------------------------------------

    def _prefill(self):
        size = self.cfg.object_size
        for c in self.cfg.caches:
            if not c.prefill:
                continue
            wl = self.workloads[c.tenant]
            store = self.caches[c.id].store
            for cid in wl.popular_cacheable(c.capacity // size)[::-1]:
                store.insert(ContentObject(cid, size), 0.0)

    def _start(self):
        self._prefill()
        for tid in sorted(self.workloads):
            wl = self.workloads[tid]
            gen = wl.arrivals(make_rng(self.cfg.seed, tid), self.cfg.duration)
            self._next_arrival(tid, gen)
        if self.caches:
            self.schedule(0.0, EventKind.DIGEST_REBUILD, None)
        if self.cfg.interception.enabled:
            self.schedule(self.cfg.interception.period, EventKind.RULE_DERIVATION, None)
        for i, a in enumerate(self.cfg.attackers):
            rng = make_rng(self.cfg.seed, 1_000_000 + i)
            self._next_attack(i, a, rng, 0.0)

    def _next_arrival(self, tid, gen):
        item = next(gen, None)
        if item is not None:
            self.schedule(item[0], EventKind.REQUEST_ARRIVAL, (tid, gen, item))

    def _next_attack(self, i, a, rng, t):
        if a.rate <= 0:
            return
        t += rng.exponential(1.0 / a.rate)
        if t < self.cfg.duration:
            self.schedule(t, EventKind.ATTACK, (i, a, rng))

    # main loop --------------------------------------------------------

    def run(self):
        self._start()
        handlers = {
            EventKind.REQUEST_ARRIVAL: self._on_arrival,
            EventKind.CACHE_LOOKUP: self._on_lookup,
            EventKind.ICP_DELIVERY: self._on_icp,
            EventKind.ICP_TIMEOUT: self._on_icp_timeout,
            EventKind.FETCH_DELIVERY: self._on_fetch,
            EventKind.POOL_ADMISSION: self._on_pool_admission,
            EventKind.TRANSFER_COMPLETION: self._on_transfer,
            EventKind.DIGEST_REBUILD: self._on_digest_rebuild,
            EventKind.RULE_DERIVATION: self._on_rule_derivation,
            EventKind.ATTACK: self._on_attack,
        }
        heap = self._heap
        n = 0
        while heap:
            t, _, kind, payload = heapq.heappop(heap)
            handlers[kind](t, payload)
            n += 1
        self.counters["events"] = n
        self.records.sort(key=lambda r: r.id)
        log.debug("simulation finished: %d events, %d requests", n, len(self.records))
        return SimResult(self.cfg, self.records, self.icp_trace, self.caches, self.links,
                         self.rule_tables, self.counters, self.peering_enabled, self.transfers)

    # request lifecycle ------------------------------------------------

    def _on_arrival(self, t, payload):
        tid, gen, (_, content, cacheable) = payload
        self._next_arrival(tid, gen)
        self.counters["arrivals"] += 1
        req = _Request(self._next_rid, tid, content, cacheable, self.cfg.object_size, t,
                       self.topo.vlan_of_tenant(tid))
        self._next_rid += 1
        user = self.topo.user_node[tid]
        cache_id = self._pick_cache(tid, content)
        if cache_id is None:
            self._origin_direct(t, req, ServedBy.ORIGIN)
            return
        self.counters["rule_lookups"][tid] += 1
        if self.rule_tables[tid].match(content.destination) == Action.BYPASS:
            self._origin_direct(t, req, ServedBy.ORIGIN_BYPASSED)
            return
        req.cache = cache_id
        up = self.path(user, self.topo.cache_node[cache_id], vlan=req.vlan,
                       size=self.cfg.request_overhead)
        req.vi += up.vi_traversals
        self.schedule(t + (up.latency / 1000.0) + self.proc_s, EventKind.CACHE_LOOKUP, req)

    def _origin_direct(self, t, req, served_by):
        user = self.topo.user_node[req.tenant]
        up = self.path(user, self.topo.origin, vlan=req.vlan, size=self.cfg.request_overhead)
        down = self.path(self.topo.origin, user, vlan=req.vlan, size=req.size)
        req.vi += up.vi_traversals + down.vi_traversals
        self.counters["wan_bytes"][req.tenant] += req.size + self.cfg.request_overhead
        self._finish(t + (up.latency + down.latency) / 1000.0, req, served_by)

    def _finish(self, t, req, served_by):
        if req.done:
            raise AssertionError("request %d delivered twice" % req.id)
        req.done = True
        self.records.append(RequestRecord(
            req.id, req.tenant, req.content, req.cacheable, req.size, req.issued, t,
            served_by, req.vi, (t - req.issued) * 1000.0, req.cache))

    def _deliver_from_cache(self, t, req, served_by):
        down = self.path(self.topo.cache_node[req.cache], self.topo.user_node[req.tenant],
                         vlan=req.vlan, size=req.size)
        req.vi += down.vi_traversals
        self._finish(t + down.latency / 1000.0, req, served_by)

    def _on_lookup(self, t, req):
        cache = self.caches[req.cache]
        req.offload = cache.id in self.offloaders
        if not req.offload and cache.store.lookup(req.content, t):
            cache.log.append(AccessLogRecord(t, req.content, Outcome.HIT, req.cacheable))
            self._deliver_from_cache(t, req, ServedBy.LOCAL)
            return
        req.peers = [(peer, link) for peer, link in cache.peers.items()
                     if link.state == LinkState.ACTIVE]
        self._try_next_peer(t, req)

    def _try_next_peer(self, t, req):
        cache = self.caches[req.cache]
        always = self.cfg.peering.always_icp or req.offload
        while req.peers:
            peer, link = req.peers.pop(0)
            if not always:
                digest = cache.peer_digests.get(peer)
                if digest is None or req.content not in digest:
                    continue
            rid = self._next_icp
            self._next_icp += 1
            link.accounting[cache.id].queries_sent += 1
            self.counters["icp_queries"] += 1
            msg = IcpMessage(IcpKind.QUERY, rid, req.content, cache.id, link.token(cache.id, peer))
            hop = self._cache_path(cache.id, peer, link.shared_network)
            req.pending = rid
            req.peer = (peer, link)
            self.schedule(t + hop.latency / 1000.0, EventKind.ICP_DELIVERY, (peer, msg, req, t))
            self.schedule(t + self.icp_timeout(link, cache.id, peer), EventKind.ICP_TIMEOUT, (req, rid, t))
            return
        self._origin_fetch(t, req)

    def _on_icp(self, t, payload):
        to, msg, req, sent_at = payload
        if msg.kind == IcpKind.QUERY:
            target = self.caches[to]
            reply = receive_icp(target, msg, t)
            self.icp_trace.append((t, "query", msg.request_id, msg.sender, msg.content.key,
                                   "allow" if reply is not None else "drop"))
            if reply is None:
                return
            back = self._cache_path(to, msg.sender, self.topo_link_net(target, msg.sender))
            self.schedule(t + self.proc_s + back.latency / 1000.0, EventKind.ICP_DELIVERY,
                          (msg.sender, reply, req, sent_at))
            return
        # reply at the requester
        self.icp_trace.append((t, msg.kind.value, msg.request_id, msg.sender, msg.content.key, msg.kind.value))
        if req.done or req.pending != msg.request_id:
            return  # timed out earlier
        req.pending = None
        peer, link = req.peer
        if msg.kind == IcpKind.HIT:
            self.counters["icp_hits"] += 1
            fwd = self._cache_path(req.cache, peer, link.shared_network)
            self.schedule(t + fwd.latency / 1000.0, EventKind.FETCH_DELIVERY, ("fetch", peer, req))
        else:
            self.counters["icp_misses"] += 1
            if not (self.cfg.peering.always_icp or req.offload):
                self.counters["digest_false_hits"] += 1
            self._try_next_peer(t, req)

    def topo_link_net(self, cache, peer):
        return cache.peers[peer].shared_network

    def _on_icp_timeout(self, t, payload):
        req, rid, sent_at = payload
        if req.done or req.pending != rid:
            return
        req.pending = None
        self.counters["icp_timeouts"] += 1
        self._try_next_peer(t, req)

    def _on_fetch(self, t, payload):
        what, at, req = payload
        if what == "failed":
            # the serving peer reported the object gone; fall back to the origin
            self._origin_fetch(t, req)
            return
        serving = self.caches[at]
        peer, link = req.peer
        requester = req.cache
        back_net = link.shared_network
        try:
            transfer = peer_fetch(serving, requester, req.content, t, link.token(requester, at))
        except EvictedSinceHit:
            self.counters["evicted_since_hit"] += 1
            back = self._cache_path(at, requester, back_net)
            self.schedule(t + self.proc_s + back.latency / 1000.0, EventKind.FETCH_DELIVERY,
                          ("failed", requester, req))
            return
        if transfer is None:  # not expected for an established link
            back = self._cache_path(at, requester, back_net)
            self.schedule(t + back.latency / 1000.0, EventKind.FETCH_DELIVERY, ("failed", requester, req))
            return
        self.schedule(transfer.admit_at, EventKind.POOL_ADMISSION, (transfer, link, req))

    def _on_pool_admission(self, t, payload):
        transfer, link, req = payload
        self.transfers.append((t, transfer.server, transfer.requester, transfer.size))
        hop = self._cache_path(transfer.server, transfer.requester, link.shared_network, transfer.size)
        self.schedule(t + self.proc_s + hop.latency / 1000.0, EventKind.TRANSFER_COMPLETION,
                      ("peer", transfer, link, req))

    def _origin_fetch(self, t, req):
        cache_node = self.topo.cache_node[req.cache]
        up = self.path(cache_node, self.topo.origin, vlan=req.vlan, size=self.cfg.request_overhead)
        down = self.path(self.topo.origin, cache_node, vlan=req.vlan, size=req.size)
        req.vi += up.vi_traversals + down.vi_traversals
        self.counters["wan_bytes"][req.tenant] += req.size + self.cfg.request_overhead
        self.schedule(t + (up.latency + down.latency) / 1000.0, EventKind.TRANSFER_COMPLETION,
                      ("origin", None, None, req))

    def _on_transfer(self, t, payload):
        source, transfer, link, req = payload
        cache = self.caches[req.cache]
        if source == "peer":
            link.complete_transfer(transfer)
            if self.cfg.peering.read_through and req.cacheable and not req.offload:
                cache.store.insert(ContentObject(req.content, req.size), t)
            cache.log.append(AccessLogRecord(t, req.content, Outcome.PEER_HIT, req.cacheable))
            self._deliver_from_cache(t, req, ServedBy.PEER)
        else:
            if req.cacheable and not req.offload:
                cache.store.insert(ContentObject(req.content, req.size), t)
            cache.log.append(AccessLogRecord(t, req.content, Outcome.LOCAL_MISS, req.cacheable))
            self._deliver_from_cache(t, req, ServedBy.ORIGIN)

    # periodic work ----------------------------------------------------

    def _on_digest_rebuild(self, t, _):
        self.counters["digest_rebuilds"] += 1
        for cid in sorted(self.caches):
            cache = self.caches[cid]
            digest = cache.rebuild_digest(t)
            for peer in cache.peers:
                self.caches[peer].peer_digests[cid] = digest
        nxt = t + self.cfg.peering.digest_period
        if nxt < self.cfg.duration:
            self.schedule(nxt, EventKind.DIGEST_REBUILD, None)

    def _on_rule_derivation(self, t, _):
        self.counters["rule_derivations"] += 1
        for tid in sorted(self.rule_tables):
            ids = self.tenant_caches.get(tid) or []
            if not ids:
                continue
            records = sorted((r for c in ids for r in self.caches[c].log), key=lambda r: r.time)
            self.rule_tables[tid] = derive_rules(records, self.predictor, t, tid,
                                                 previous=self.rule_tables[tid])
        nxt = t + self.cfg.interception.period
        if nxt < self.cfg.duration:
            self.schedule(nxt, EventKind.RULE_DERIVATION, None)

    def _on_attack(self, t, payload):
        i, a, rng = payload
        self._next_attack(i, a, rng, t)
        stats = self.counters["attack"]
        target = self.caches[a.target]
        sender = a.spoof_as if a.spoof_as is not None else a.cache
        reachable = False
        for net in sorted(self.topo.shared_networks):
            try:
                self._cache_path(a.cache, a.target, net)
                reachable = True
                break
            except NoPath:
                continue
        stats["queries_sent"] += 1
        stats["fetches_sent"] += 1
        if not reachable:
            stats["unreachable"] += 2
            return
        if target.store.entries:
            content = next(reversed(target.store.entries))
        else:
            content = self.workloads[target.tenant].content_for_rank(0)
        # the attacker cannot know the link credential; it guesses with its own seed
        token = make_token(self.cfg.seed ^ 0x5EED, sender, a.target)
        rid = -(self._next_icp + 1)
        self._next_icp += 1
        reply = receive_icp(target, IcpMessage(IcpKind.QUERY, rid, content, sender, token), t)
        self.icp_trace.append((t, "query", rid, sender, content.key, "allow" if reply else "drop"))
        if reply is not None:
            stats["queries_answered"] += 1
        else:
            stats["dropped"] += 1
        if acl_check(target.acl, sender, FETCH_PORT, token) != "allow":
            stats["dropped"] += 1
            return
        try:
            transfer = peer_fetch(target, sender, content, t, token)
        except EvictedSinceHit:
            return
        if transfer is not None:
            stats["bytes_served"] += transfer.size


def run(config, peering=True):
    """Run one scenario; returns a :class:`SimResult`."""
    return Simulation(config, peering=peering).run()

"""Sibling peering between co-located vCaches.

Covers link establishment over an RBAC-style shared network, per-direction
credentials, the input ACL of a vCache, ICP-style query handling, peer
fetches shaped by a class-2 delay pool, and symmetry accounting.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

from .errors import EvictedSinceHit, SameTenant

ICP_PORT = 3130
FETCH_PORT = 3128


class LinkState(str, Enum):
    PROPOSED = "proposed"
    ACTIVE = "active"
    REVOKED = "revoked"


class IcpKind(str, Enum):
    QUERY = "query"
    HIT = "hit"
    MISS = "miss"


@dataclass(frozen=True)
class IcpMessage:
    kind: IcpKind
    request_id: int
    content: object
    sender: int
    token: str


# token buckets --------------------------------------------------------

class TokenBucket:
    """Lazily refilled token bucket measured in bytes.

    ``level`` is only meaningful at time ``last``; refill is linear in
    elapsed time and saturates at ``capacity``.
    """

    def __init__(self, capacity, rate, level=None, last=0.0):
        if capacity <= 0 or rate <= 0:
            raise ValueError("token bucket needs positive capacity and rate")
        self.capacity = float(capacity)
        self.rate = float(rate)
        self.level = self.capacity if level is None else float(level)
        self.last = float(last)

    def level_at(self, t):
        if t <= self.last:
            return self.level
        return min(self.capacity, self.level + self.rate * (t - self.last))

    def refill(self, t):
        if t > self.last:
            self.level = self.level_at(t)
            self.last = t

    def ready_at(self, amount, t):
        """Earliest time >= t at which the bucket holds ``amount`` bytes."""
        lvl = self.level_at(t)
        if lvl >= amount:
            return t
        return max(t, self.last) + (amount - lvl) / self.rate

    def debit(self, amount, t):
        self.refill(t)
        self.level -= amount
        # float residue from the ready_at division
        if -1e-6 < self.level < 0:
            self.level = 0.0


class DelayPool:
    """Class-2 delay pool: one aggregate bucket plus one bucket per peer.

    Requests are admitted FIFO across the whole pool. A request larger than
    the smallest bucket capacity is admitted in capacity-sized chunks;
    ``admit`` returns the admission time of the last chunk.
    """

    def __init__(self, aggregate=None, individual=None, start=0.0):
        # aggregate / individual: (capacity, rate) tuples, None = unlimited
        self.aggregate = TokenBucket(*aggregate, last=start) if aggregate else None
        self.individual_params = individual
        self.individual: dict[int, TokenBucket] = {}
        self.start = start
        self.tail = start
        self.admitted_bytes: dict[int, int] = {}

    def bucket_for(self, peer):
        if self.individual_params is None:
            return None
        b = self.individual.get(peer)
        if b is None:
            b = TokenBucket(*self.individual_params, last=self.start)
            self.individual[peer] = b
        return b

    def _chunk(self, peer):
        caps = []
        if self.aggregate is not None:
            caps.append(self.aggregate.capacity)
        ind = self.bucket_for(peer)
        if ind is not None:
            caps.append(ind.capacity)
        return min(caps) if caps else None

    def admit(self, peer, nbytes, now):
        if nbytes <= 0:
            raise ValueError("bytes must be positive")
        buckets = [b for b in (self.aggregate, self.bucket_for(peer)) if b is not None]
        t = max(now, self.tail)
        if not buckets:
            self.tail = t
            self.admitted_bytes[peer] = self.admitted_bytes.get(peer, 0) + nbytes
            return t
        chunk = self._chunk(peer)
        remaining = nbytes
        while remaining > 0:
            part = min(chunk, remaining)
            t = max(b.ready_at(part, t) for b in buckets)
            for b in buckets:
                b.debit(part, t)
            remaining -= part
        self.tail = t
        self.admitted_bytes[peer] = self.admitted_bytes.get(peer, 0) + nbytes
        return t


def delay_pool_admit(pool, peer, nbytes, now):
    return pool.admit(peer, nbytes, now)


# access control -------------------------------------------------------

@dataclass
class AccessRuleSet:
    """iptables-like input filter of a vCache; anything not matched is dropped."""
    allowed_sources: dict[int, str] = field(default_factory=dict)  # peer cache -> expected token
    allowed_ports: frozenset = frozenset({ICP_PORT, FETCH_PORT})
    default: str = "drop"

    def allow(self, peer, token):
        self.allowed_sources[peer] = token

    def revoke(self, peer):
        self.allowed_sources.pop(peer, None)


def acl_check(rules, sender, port, token):
    expected = rules.allowed_sources.get(sender)
    if expected is not None and port in rules.allowed_ports and token == expected:
        return "allow"
    return "drop"


# links and accounting --------------------------------------------------

@dataclass
class PeeringAccounting:
    bytes_served_to_peer: int = 0
    bytes_fetched_from_peer: int = 0
    queries_sent: int = 0
    queries_received: int = 0
    hits_returned: int = 0
    misses_returned: int = 0

    def as_dict(self):
        return dict(self.__dict__)


UNDEFINED = None


def symmetry_ratio(acc):
    """bytes served / bytes fetched, or ``UNDEFINED`` when nothing was fetched."""
    if acc.bytes_fetched_from_peer == 0:
        return UNDEFINED
    return acc.bytes_served_to_peer / acc.bytes_fetched_from_peer


def make_token(seed, sender, receiver):
    raw = ("%d:%d->%d" % (seed, sender, receiver)).encode()
    return hashlib.blake2b(raw, digest_size=8).hexdigest()


@dataclass
class PeeringLink:
    caches: tuple[int, int]
    shared_network: int
    credentials: dict[tuple[int, int], str]  # (sender, receiver) -> token
    state: LinkState = LinkState.PROPOSED
    accounting: dict[int, PeeringAccounting] = field(default_factory=dict)

    def other(self, cache):
        a, b = self.caches
        if cache == a:
            return b
        if cache == b:
            return a
        raise KeyError(cache)

    def token(self, sender, receiver):
        return self.credentials[(sender, receiver)]

    def complete_transfer(self, transfer):
        """Book a finished peer transfer on both ends."""
        self.accounting[transfer.server].bytes_served_to_peer += transfer.size
        self.accounting[transfer.requester].bytes_fetched_from_peer += transfer.size


@dataclass(frozen=True)
class Transfer:
    server: int
    requester: int
    content: object
    size: int
    requested_at: float
    admit_at: float


def establish_peering(topology, cache_a, cache_b, network, seed=0, vcaches=None):
    """Bring up a sibling link over ``network``.

    Caches not yet attached are attached here, so a missing grant surfaces as
    NotGranted. When ``vcaches`` (id -> VCache) is given, both ends get the
    link, an ACL entry for the peer and an empty digest slot.
    """
    ta, tb = topology.cache_tenant[cache_a], topology.cache_tenant[cache_b]
    if cache_a == cache_b or ta == tb:
        raise SameTenant("caches %d and %d both belong to tenant %d" % (cache_a, cache_b, ta))
    net = topology.shared_networks[network]
    for c in (cache_a, cache_b):
        if c not in net.attached:
            topology.attach_cache(network, c)
    creds = {
        (cache_a, cache_b): make_token(seed, cache_a, cache_b),
        (cache_b, cache_a): make_token(seed, cache_b, cache_a),
    }
    link = PeeringLink((cache_a, cache_b), network, creds,
                       accounting={cache_a: PeeringAccounting(), cache_b: PeeringAccounting()})
    link.state = LinkState.ACTIVE
    if vcaches is not None:
        for me in (cache_a, cache_b):
            peer = link.other(me)
            vc = vcaches[me]
            vc.peers[peer] = link
            vc.acl.allow(peer, link.token(peer, me))
            vc.peer_digests[peer] = None
    return link


def revoke_peering(link, vcaches=None):
    link.state = LinkState.REVOKED
    if vcaches is not None:
        for me in link.caches:
            peer = link.other(me)
            vcaches[me].peers.pop(peer, None)
            vcaches[me].acl.revoke(peer)
            vcaches[me].peer_digests.pop(peer, None)


# message handling -----------------------------------------------------

def icp_handle_query(cache, msg, now):
    """Answer an ICP query that already passed the ACL.

    The lookup is a pure availability probe: no recency promotion. A replayed
    (sender, request_id) gets the original answer and is not counted again.
    """
    key = (msg.sender, msg.request_id)
    seen = cache._icp_answers.get(key)
    if seen is not None:
        return seen
    link = cache.peers[msg.sender]
    acc = link.accounting[cache.id]
    acc.queries_received += 1
    if cache.store.peek(msg.content):
        kind = IcpKind.HIT
        acc.hits_returned += 1
    else:
        kind = IcpKind.MISS
        acc.misses_returned += 1
    reply = IcpMessage(kind, msg.request_id, msg.content, cache.id, link.token(cache.id, msg.sender))
    cache._icp_answers[key] = reply
    return reply


def receive_icp(cache, msg, now):
    """ACL-filtered ICP entry point; returns None when the query is dropped."""
    if acl_check(cache.acl, msg.sender, ICP_PORT, msg.token) != "allow":
        cache.dropped_messages += 1
        return None
    link = cache.peers.get(msg.sender)
    if link is None or link.state != LinkState.ACTIVE:
        cache.dropped_messages += 1
        return None
    return icp_handle_query(cache, msg, now)


def peer_fetch(serving, requester, content, now, token):
    """Serve ``content`` from ``serving`` to the peer cache ``requester``.

    Returns a :class:`Transfer` whose ``admit_at`` reflects delay-pool
    shaping, or None if the ACL drops the request. Raises EvictedSinceHit
    when the object is gone. Accounting is booked by
    :meth:`PeeringLink.complete_transfer` once the transfer lands.
    """
    if acl_check(serving.acl, requester, FETCH_PORT, token) != "allow":
        serving.dropped_messages += 1
        return None
    link = serving.peers.get(requester)
    if link is None or link.state != LinkState.ACTIVE:
        serving.dropped_messages += 1
        return None
    entry = serving.store.entries.get(content)
    if entry is None:
        raise EvictedSinceHit(content)
    serving.store.lookup(content, now)
    size = entry[0]
    admit_at = now
    if serving.delay_pool is not None:
        admit_at = serving.delay_pool.admit(requester, size, now)
    return Transfer(serving.id, requester, content, size, now, admit_at)

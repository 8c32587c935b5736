"""Per-tenant request workloads: Poisson arrivals over a Zipf-popular catalog.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence([seed, tenant])``; PCG64 output is specified and identical
across platforms, so a (seed, tenant) pair always yields the same stream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cache import ContentId

CHUNK = 4096


def zipf_pmf(n, alpha):
    w = np.arange(1, n + 1, dtype=np.float64) ** -float(alpha)
    return w / w.sum()


def make_rng(seed, stream):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


@dataclass
class Workload:
    tenant: int
    catalog_size: int
    zipf_alpha: float
    rate: float
    personalized_fraction: float = 0.0
    destinations: int = 10
    personalized_destinations: int = 1
    shared_prefix: int = 0  # ranks [0, shared_prefix) are shared with overlap_peer
    overlap_peer: int | None = None

    def __post_init__(self):
        if self.catalog_size < 1:
            raise ValueError("catalog size must be >= 1")
        self.cdf = np.cumsum(zipf_pmf(self.catalog_size, self.zipf_alpha))
        self.cdf[-1] = 1.0
        if self.overlap_peer is not None:
            lo, hi = sorted((self.tenant, self.overlap_peer))
            self._shared_tag = "s%d-%d" % (lo, hi)
        else:
            self._shared_tag = None
        self._personal_counter = 0

    def content_for_rank(self, rank):
        rank = int(rank)
        dest = rank % self.destinations
        if rank < self.shared_prefix:
            return ContentId("%s:%d" % (self._shared_tag, rank), dest)
        return ContentId("t%d:%d" % (self.tenant, rank), dest)

    def personalized_destination(self, index):
        return self.destinations + int(index) % self.personalized_destinations

    def ranks(self, u):
        return np.minimum(np.searchsorted(self.cdf, u, side="right"), self.catalog_size - 1)

    def sample(self, rng):
        """One draw: (ContentId, cacheable)."""
        if self.personalized_fraction > 0 and rng.random() < self.personalized_fraction:
            return self._personal(rng.integers(self.personalized_destinations)), False
        return self.content_for_rank(self.ranks(rng.random())), True

    def _personal(self, index):
        self._personal_counter += 1
        return ContentId("p%d:%d" % (self.tenant, self._personal_counter),
                         self.personalized_destination(index))

    def arrivals(self, rng, duration):
        """Yield (time, ContentId, cacheable) for t < duration, drawing in fixed chunks."""
        if self.rate <= 0 or duration <= 0:
            return
        t = 0.0
        while True:
            # plain Python numbers from here on, so reprs stay numpy-free
            gaps = rng.exponential(1.0 / self.rate, CHUNK).tolist()
            u_rank = rng.random(CHUNK)
            u_pers = rng.random(CHUNK).tolist()
            pdest = rng.integers(self.personalized_destinations, size=CHUNK).tolist()
            ranks = self.ranks(u_rank).tolist()
            for i in range(CHUNK):
                t += gaps[i]
                if t >= duration:
                    return
                if u_pers[i] < self.personalized_fraction:
                    yield t, self._personal(pdest[i]), False
                else:
                    yield t, self.content_for_rank(ranks[i]), True

    def popular_cacheable(self, count):
        """The ``count`` most popular catalog objects, most popular first."""
        return [self.content_for_rank(r) for r in range(min(count, self.catalog_size))]


def sample_request(workload, rng):
    return workload.sample(rng)


def workloads_from_config(cfg):
    out = {}
    sizes = {t.id: t.catalog_size for t in cfg.tenants}
    for t in cfg.tenants:
        shared, peer = 0, None
        if t.overlap is not None and t.overlap.fraction > 0:
            peer = t.overlap.peer
            shared = int(round(t.overlap.fraction * min(t.catalog_size, sizes[peer])))
        out[t.id] = Workload(
            tenant=t.id, catalog_size=t.catalog_size, zipf_alpha=t.zipf_alpha, rate=t.rate,
            personalized_fraction=t.personalized_fraction, destinations=cfg.destinations,
            personalized_destinations=t.personalized_destinations,
            shared_prefix=shared, overlap_peer=peer,
        )
    return out

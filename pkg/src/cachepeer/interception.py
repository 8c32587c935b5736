"""Integration-bridge flow rules and their offline derivation from access logs.

Rules only ever say *bypass*: destinations whose traffic is prone to cache
misses are steered straight to the origin, everything else falls through to
the default intercept action.
"""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

from .cache import CacheStore, ContentObject, Outcome


class Action(str, Enum):
    INTERCEPT = "intercept"
    BYPASS = "bypass"


@dataclass(frozen=True)
class FlowRule:
    match: int  # destination id
    action: Action
    priority: int = 100


@dataclass(frozen=True)
class MissPredictorConfig:
    window: float = 300.0
    min_samples: int = 10
    threshold: float = 0.8

    def __post_init__(self):
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")
        if self.window <= 0:
            raise ValueError("window must be positive")
        # thresholds above 1 are allowed and simply never fire
        if not self.threshold >= 0:
            raise ValueError("threshold must be >= 0")


@dataclass
class RuleTable:
    tenant: int
    rules: list[FlowRule] = field(default_factory=list)
    default_action: Action = Action.INTERCEPT

    def __post_init__(self):
        self.rules = sorted(self.rules, key=lambda r: (-r.priority, r.match))
        seen = set()
        self._index = {}
        for r in self.rules:
            if r.match in seen:
                raise ValueError("duplicate rule for destination %r" % r.match)
            seen.add(r.match)
            self._index[r.match] = r.action

    def __len__(self):
        return len(self.rules)

    def match(self, destination):
        return self._index.get(destination, self.default_action)

    def bypassed(self):
        return {r.match for r in self.rules if r.action == Action.BYPASS}

    def to_rows(self):
        return [(self.tenant, r.match, r.action.value, r.priority) for r in self.rules]


RULE_FIELDS = ["tenant", "destination", "action", "priority"]


def rules_to_csv(tables, fh=None):
    out = fh if fh is not None else io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(RULE_FIELDS)
    for table in tables:
        w.writerows(table.to_rows())
    if fh is None:
        return out.getvalue()


def rules_from_csv(fh):
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        return []
    if header != RULE_FIELDS:
        raise ValueError("line 1: expected header %s" % ",".join(RULE_FIELDS))
    by_tenant = defaultdict(list)
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            tenant, dest, action, prio = row
            by_tenant[int(tenant)].append(FlowRule(int(dest), Action(action), int(prio)))
        except ValueError as exc:
            raise ValueError("line %d: %s" % (lineno, exc)) from None
    return [RuleTable(t, rules) for t, rules in sorted(by_tenant.items())]


def rule_match(table, destination):
    return table.match(destination)


def miss_ratios(records):
    """Per destination: (miss-prone count, total) over time-ordered records.

    A record is miss-prone when it is a local miss on non-cacheable content,
    or a local miss on content that is never hit again later in ``records``.
    Bypassed records carry no cache outcome and are ignored.
    """
    counts = defaultdict(lambda: [0, 0])
    later_hit = set()
    for r in reversed(records):
        if r.outcome == Outcome.BYPASSED:
            continue
        c = counts[r.content.destination]
        c[1] += 1
        if r.outcome in (Outcome.HIT, Outcome.PEER_HIT):
            later_hit.add(r.content)
        elif r.outcome == Outcome.LOCAL_MISS:
            if not r.cacheable or r.content not in later_hit:
                c[0] += 1
    return {d: (c[0], c[1]) for d, c in counts.items()}


def derive_rules(log, cfg, now, tenant=0, previous=None):
    """Bypass rules for destinations whose recent miss-prone share >= threshold.

    Only records inside ``[now - window, now]`` count. When ``previous`` is
    given, its bypass rules are kept for destinations that have too few fresh
    samples: bypassed traffic no longer reaches the cache log, so without
    carry-over a rule would expire one period after it was installed.
    """
    records = [r for r in log if now - cfg.window <= r.time <= now]
    ratios = miss_ratios(records)
    rules = []
    for dest in sorted(ratios):
        prone, total = ratios[dest]
        if total < cfg.min_samples:
            continue
        if prone / total >= cfg.threshold:
            rules.append(FlowRule(dest, Action.BYPASS))
    if previous is not None:
        fresh = {d for d, (_, total) in ratios.items() if total >= cfg.min_samples}
        have = {r.match for r in rules}
        for r in previous.rules:
            if r.action == Action.BYPASS and r.match not in fresh and r.match not in have:
                rules.append(r)
    return RuleTable(tenant, rules)


@dataclass
class RuleEvaluation:
    bypassed: int
    true_positive_bypass: int  # bypassed requests that would have missed anyway
    false_bypass_count: int  # bypassed requests that would have hit
    intercepted: int
    intercept_hits: int
    footprint_rule_count: int

    @property
    def false_bypass(self):
        return self.false_bypass_count / self.bypassed if self.bypassed else 0.0

    @property
    def intercept_hit_rate(self):
        return self.intercept_hits / self.intercepted if self.intercepted else None

    def as_dict(self):
        d = dict(self.__dict__)
        d["false_bypass"] = self.false_bypass
        d["intercept_hit_rate"] = self.intercept_hit_rate
        return d


def _replay(records, capacity, size_of, snapshot):
    store = snapshot.snapshot() if snapshot is not None else CacheStore(capacity)
    out = []
    for r in records:
        hit = store.lookup(r.content, r.time)
        if not hit and r.cacheable:
            size = size_of(r.content)
            if size <= store.capacity:
                store.insert(ContentObject(r.content, size), r.time)
        out.append(hit)
    return out


def evaluate_rules(table, holdout, capacity, size_of=None, snapshot=None):
    """Replay a holdout log to score a rule table.

    Two replays through a fresh (or snapshot) LRU store: one with every
    request intercepted decides which bypassed requests would have hit; one
    with only the intercepted requests gives the achieved hit rate.
    """
    size_of = size_of or (lambda cid: 1)
    records = [r for r in holdout if r.outcome != Outcome.BYPASSED]
    would_hit = _replay(records, capacity, size_of, snapshot)
    bypass = table.bypassed()
    kept = [r for r in records if r.content.destination not in bypass]
    kept_hits = _replay(kept, capacity, size_of, snapshot)
    bypassed = false_bypass = 0
    for r, hit in zip(records, would_hit):
        if r.content.destination in bypass:
            bypassed += 1
            false_bypass += hit
    return RuleEvaluation(
        bypassed=bypassed,
        true_positive_bypass=bypassed - false_bypass,
        false_bypass_count=false_bypass,
        intercepted=len(kept),
        intercept_hits=sum(kept_hits),
        footprint_rule_count=len(table),
    )

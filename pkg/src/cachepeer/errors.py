"""Exception hierarchy shared by all cachepeer modules."""


class CachePeerError(Exception):
    pass


class NoPath(CachePeerError):
    """No admissible path exists for the flow (VLAN isolation or missing attachment)."""


class NotOwner(CachePeerError):
    pass


class NotGranted(CachePeerError):
    pass


class AlreadyAttached(CachePeerError):
    pass


class SameTenant(CachePeerError):
    """Peering is inter-tenant; both caches belong to one tenant."""


class ObjectTooLarge(CachePeerError):
    pass


class NotCacheable(CachePeerError):
    pass


class TimeRegression(CachePeerError):
    pass


class EvictedSinceHit(CachePeerError):
    """The object was evicted between the ICP hit and the fetch."""


class NoPeeringDefined(CachePeerError):
    pass


class ConfigInvalid(CachePeerError):
    """Raised with the full list of violations; each names the offending field path."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = ["%s: %s" % (v.path, v.message) for v in self.violations]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))

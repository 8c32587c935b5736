"""Cache peering between co-located tenant vCaches in a shared micro data center."""

__version__ = "0.1.0"

"""Grant-free massive access over a HAP-based aerial cell-free massive MIMO network."""

__version__ = "0.1.0"

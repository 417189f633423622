"""Monte Carlo laboratory for degenerate SDEs driven by truncated stable-like jumps."""

__version__ = "0.1.0"

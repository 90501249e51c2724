"""Map vulnerability advisories onto the commits that fix them."""

__version__ = "0.1.0"

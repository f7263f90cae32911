"""Heat semigroups of weighted dbar-Laplacians on polynomial weights."""
__version__ = "0.1.0"

"""PDE-ICL package."""

__version__ = "0.1.0"

__all__ = [
    "backends",
    "codec",
    "config",
    "experiments",
    "grid_ic",
    "metrics",
    "plotdata",
    "solvers",
]

"""Quasilinear elliptic systems in fibered media: solvers and symmetry diagnostics."""

__version__ = "0.1.0"

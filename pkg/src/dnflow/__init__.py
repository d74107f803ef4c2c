"""Implicit-scheme solver and diagnostics for D psi(v_t) = div DF(Dv)."""

__version__ = "0.1.0"

"""Marangoni convection toolkit: tuned heat profiles, the spectrum of the
linearized problem, Galerkin reduction onto the neutral modes, heat-source
control of the reduced coefficients, realization of quadratic vector
fields and a direct simulator of the full equations.

Submodules are imported on demand (``from marangoni import spectral``) so
that the command line can configure thread pools before numpy loads.
"""
__version__ = "0.1.0"

__all__ = ["heatprofile", "spectral", "galerkin", "control", "quadratic", "pdesim",
           "fields", "quadrature", "errors", "io", "cli"]

"""Taylor-Hood Navier-Stokes solver with a POD-Galerkin reduced-order pipeline."""

__version__ = "0.1.0"

"""Numerical core: kernels, autodiff, the GMVAE and its analysis tools."""

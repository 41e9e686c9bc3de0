"""msgfem: multiscale spectral GFEM for singularly perturbed reaction-diffusion problems."""

__version__ = "0.1.0"

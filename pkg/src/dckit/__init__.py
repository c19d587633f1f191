"""Metrics, condition sampling and diffusion kernels for labeled synthetic face datasets."""

__version__ = "0.1.0"

from dckit.backend import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]

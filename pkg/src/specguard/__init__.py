"""specguard: spectral regularization of feature maps for adversarial
robustness, with the machinery to verify it (layer spectra, certified
distance bounds, black-box attack evaluation, ETF alignment experiments)."""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]

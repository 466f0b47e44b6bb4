"""Differentiable perspective-transformation layer with analytic gradients."""

__version__ = "0.1.0"

from .homography import (CameraExtrinsics, CameraIntrinsics, DegenerateHomographyError,
                         Homography, HorizonError, compose, invert)
from .image import ImageFormatError, load_image, mse, save_image
from .kernels import KernelSpec, k1, k1_prime, weight
from .layer import BackwardResult, ForwardCache, PTLayer, backward, forward, new_layer, warp

__all__ = [
    "BackwardResult", "CameraExtrinsics", "CameraIntrinsics", "DegenerateHomographyError",
    "ForwardCache", "Homography", "HorizonError", "ImageFormatError", "KernelSpec", "PTLayer",
    "backward", "compose", "forward", "invert", "k1", "k1_prime", "load_image", "mse",
    "new_layer", "save_image", "warp", "weight",
]

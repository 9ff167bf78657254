"""Low-light enhancement and fixation-based target recognition for desk-scale robot vision."""

from .image_core import ImagePlane, RgbImage, load_image, save_image
from .retinex import EnhanceConfig, enhance
from .metrics import MetricsReport, measure

__all__ = [
    "EnhanceConfig",
    "ImagePlane",
    "MetricsReport",
    "RgbImage",
    "enhance",
    "load_image",
    "measure",
    "save_image",
]
__version__ = "0.1.0"

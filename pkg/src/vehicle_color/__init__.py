"""Vehicle color recognition with a dual-base-network CNN, implemented on the CPU."""

from .colorspace import ColorSpace, Image, convert, mean_image
from .data import CLASS_NAMES
from .estimator import ColorSpaceTransformer, VehicleColorClassifier
from .model import NetworkSpec, NetworkState, backward, build, forward
from .optim import TrainConfig, lr_at, sgd_step

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "ColorSpace",
    "ColorSpaceTransformer",
    "Image",
    "NetworkSpec",
    "NetworkState",
    "TrainConfig",
    "VehicleColorClassifier",
    "backward",
    "build",
    "convert",
    "forward",
    "lr_at",
    "mean_image",
    "sgd_step",
]

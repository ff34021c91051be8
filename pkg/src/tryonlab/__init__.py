"""tryonlab: desk-scale layered virtual try-on with garment tweaking.

A self-contained pipeline: procedural paper-doll data with exact pose and
segmentation ground truth, pose/texture encoders with flow-based warping,
recurrent soft-mask garment composition, GAN training, metrics, attribute
tweaks, and an HTTP session service for interactive use.
"""

__version__ = "0.1.0"

from tryonlab.errors import (
    FormatError,
    OracleSizeError,
    ShapeError,
    TrainingError,
    TweakError,
    ValidationError,
)

__all__ = [
    "FormatError",
    "OracleSizeError",
    "ShapeError",
    "TrainingError",
    "TweakError",
    "ValidationError",
    "__version__",
]

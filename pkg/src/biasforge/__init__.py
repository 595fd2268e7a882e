"""biasforge: find demographic bias in face datasets and compensate for it.

The pipeline analyzes an attribute manifest plus images for underrepresented
attributes and skin tones, trains GANs that synthesize compensating data
(skin-tone recoloring, eyeglasses removal), enhances degraded frames, scores
everything with PSNR/SSIM, and assembles a balanced dataset manifest.
"""

from .errors import (BiasForgeError, CorruptImageData, DataError, ImageFileMissing,
                     ManifestFormatError, NumericError, RangeTagError, ShapeError,
                     UnsupportedImageFormat, UsageError)
from .imagecore import (Image, RangeTag, from_array, load_image, resize_bilinear,
                        rotate, save_image, to_grayscale, to_model_range,
                        from_model_range, horizontal_flip)
from .metrics import mse, psnr, ssim, aggregate, MetricsReport
from .dataset import (AttributeManifest, parse_attribute_manifest,
                      serialize_attribute_manifest, split_dataset, augment,
                      generate_synthetic_face, composite_glasses, SyntheticFaceSpec)
from .bias import analyze_dataset, attribute_frequencies, flag_underrepresented, tone_histogram
from .version import TOOL_VERSION as __version__

__all__ = [
    "BiasForgeError", "CorruptImageData", "DataError", "ImageFileMissing",
    "ManifestFormatError", "NumericError", "RangeTagError", "ShapeError",
    "UnsupportedImageFormat", "UsageError",
    "Image", "RangeTag", "from_array", "load_image", "resize_bilinear", "rotate",
    "save_image", "to_grayscale", "to_model_range", "from_model_range",
    "horizontal_flip",
    "mse", "psnr", "ssim", "aggregate", "MetricsReport",
    "AttributeManifest", "parse_attribute_manifest", "serialize_attribute_manifest",
    "split_dataset", "augment", "generate_synthetic_face", "composite_glasses",
    "SyntheticFaceSpec",
    "analyze_dataset", "attribute_frequencies", "flag_underrepresented",
    "tone_histogram",
    "__version__",
]

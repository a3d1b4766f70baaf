"""Export multi-block CNN feature maps for real images into FTEN files.

Images are resized to 256x256, normalized with the ImageNet channel
statistics, passed through a pretrained backbone, and the selected blocks'
feature maps are bilinearly resized to a common (h, w) and concatenated
along channels. The result is written in the FTEN interchange format
consumed by the anomaly-detection core.
"""

from .export import (BACKBONES, ExportConfig, export_features, load_backbone,
                     write_ften)

__all__ = ["BACKBONES", "ExportConfig", "export_features", "load_backbone",
           "write_ften"]

"""Offline exporter: backbone features and correspondence maps for corrxai."""

from .backbone import FeatureBackbone
from .extract import (ExtractionReport, bank_digest, export_correspondences,
                      extract_features)

__version__ = "0.1.0"

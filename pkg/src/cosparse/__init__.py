"""Co-localization by learning a detector with sparse (low-entropy) score distributions."""

from .dataset_io import BBox, DatasetManifest, ImageRecord, ProposalSet, SynthConfig, generate_synthetic, load_manifest
from .detector import Detector, TrainConfig, train
from .segmentation import SegParams

__all__ = [
    "BBox",
    "DatasetManifest",
    "Detector",
    "ImageRecord",
    "ProposalSet",
    "SegParams",
    "SynthConfig",
    "TrainConfig",
    "generate_synthetic",
    "load_manifest",
    "train",
]

"""Per-pixel detection heat maps built from proposal scores."""

from __future__ import annotations

import numpy as np

from .dataset_io import ProposalSet


def accumulate_heatmap(width: int, height: int, props: ProposalSet, scores) -> np.ndarray:
    """Sum of the scores of all proposals covering each pixel, as an (H, W) array.

    Pixels outside every proposal stay exactly 0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(props):
        raise ValueError(f"{len(scores)} scores for {len(props)} proposals")
    raw = np.zeros((height, width))
    for (x0, y0, x1, y1), s in zip(props.boxes.tolist(), scores.tolist()):
        if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
            raise ValueError(f"proposal box {(x0, y0, x1, y1)} outside {width}x{height}")
        raw[y0:y1, x0:x1] += s
    return raw


def normalize_heatmap(raw) -> np.ndarray:
    """Min-max scale into [0, 1]; a constant map carries no evidence and becomes all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi <= lo:
        return np.zeros_like(raw)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def heatmap_to_gray(heat) -> np.ndarray:
    """8-bit rendering: value * 255 rounded half up."""
    return np.floor(np.asarray(heat) * 255.0 + 0.5).astype(np.uint8)

"""Dataset-level localization for the four methods, and the prediction/report files.

Methods:

``our-sel``  top-scoring proposal under the learned detector
``our-seg``  graph-cut refinement of the learned detector's heat map
``obj-sel``  top-objectness proposal
``obj-seg``  graph-cut refinement of an objectness heat map
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataset_io import BBox, DatasetError, DatasetManifest, ImageRecord, atomic_write_bytes
from .detector import Detector, score_proposals, top_proposal_index
from .evaluation import best_iou, corloc, corloc_curve, diagnose, mode_fractions
from .segmentation import SegParams, Segmentation, segment_image

MODES = ("our-sel", "our-seg", "obj-sel", "obj-seg")


def proposal_scores(img: ImageRecord, mode: str, d: Detector | None, use_objectness: bool = True):
    if mode.startswith("obj-"):
        return img.proposals.objectness
    if d is None:
        raise ValueError(f"mode {mode!r} needs a detector")
    return score_proposals(d, img.features, img.proposals, use_objectness)


def localize_image(
    img: ImageRecord,
    mode: str,
    d: Detector | None = None,
    params: SegParams = SegParams(),
    use_objectness: bool = True,
) -> tuple[BBox, Segmentation | None]:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    scores = proposal_scores(img, mode, d, use_objectness)
    if mode.endswith("-sel"):
        return img.proposals.box(top_proposal_index(scores)), None
    if img.raster is None:
        raise DatasetError(f"image {img.id!r}: mode {mode} needs a raster")
    seg = segment_image(img, scores, params)
    return seg.box, seg


def predict(
    data: DatasetManifest,
    mode: str,
    d: Detector | None = None,
    params: SegParams = SegParams(),
    use_objectness: bool = True,
) -> dict[str, BBox]:
    if mode.endswith("-seg"):
        missing = [img.id for img in data.images if img.raster is None]
        if missing:
            raise DatasetError(f"image {missing[0]!r}: mode {mode} needs a raster")
    return {
        img.id: localize_image(img, mode, d, params, use_objectness)[0] for img in data.images
    }


# --- predictions file: "id x_min y_min x_max y_max mode" per line ---------

def write_predictions(path, preds: dict[str, BBox], mode: str) -> None:
    lines = [f"{image_id} {' '.join(map(str, box.as_tuple()))} {mode}" for image_id, box in preds.items()]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def load_predictions(path) -> tuple[dict[str, BBox], dict[str, str]]:
    """Returns ``(boxes by id, mode by id)``."""
    boxes, modes = {}, {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read predictions ({exc.strerror})") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise DatasetError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        image_id = parts[0]
        if image_id in boxes:
            raise DatasetError(f"{path}:{lineno}: duplicate image id {image_id!r}")
        try:
            boxes[image_id] = BBox(*(int(v) for v in parts[1:5]))
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        modes[image_id] = parts[5]
    return boxes, modes


# --- evaluation report ----------------------------------------------------

def evaluation_report(
    preds: dict[str, BBox], data: DatasetManifest, threshold: float = 0.5, num_points: int = 101
) -> dict:
    known = data.by_id()
    gts = {}
    for image_id in preds:
        if image_id not in known:
            raise DatasetError(f"prediction for unknown image id {image_id!r}")
        if not known[image_id].ground_truth:
            raise DatasetError(f"image {image_id!r}: no ground truth to evaluate against")
        gts[image_id] = known[image_id].ground_truth
    per_image, modes = [], []
    for image_id, box in preds.items():
        mode = diagnose(box, gts[image_id])
        modes.append(mode)
        per_image.append(
            {"id": image_id, "box": list(box.as_tuple()), "iou": best_iou(box, gts[image_id]), "mode": mode.value}
        )
    curve = corloc_curve(preds, gts, num_points)
    return {
        "threshold": threshold,
        "num_images": len(preds),
        "corloc": corloc(preds, gts, threshold),
        "curve": {"thresholds": curve.thresholds.tolist(), "values": curve.values.tolist()},
        "mode_fractions": mode_fractions(modes),
        "per_image": per_image,
    }


def write_json(path, doc) -> None:
    atomic_write_bytes(path, (json.dumps(doc, indent=1) + "\n").encode())


def draw_box(raster: np.ndarray, box: BBox, color=(255, 0, 0), thickness: int = 1) -> np.ndarray:
    """Copy of ``raster`` with the box outline painted on its border pixels."""
    out = np.array(raster, dtype=np.uint8, copy=True)
    x0, y0, x1, y1 = box.as_tuple()
    t = thickness
    out[y0:min(y0 + t, y1), x0:x1] = color
    out[max(y1 - t, y0):y1, x0:x1] = color
    out[y0:y1, x0:min(x0 + t, x1)] = color
    out[y0:y1, max(x1 - t, x0):x1] = color
    return out


"""On-disk formats for co-localization datasets, plus a planted-signal generator.

Layout of a dataset directory::

    manifest.json              image list (ids, sizes, relative paths, ground truth)
    proposals/<id>.txt         one proposal per line: ``x_min y_min x_max y_max objectness``
    features/<id>.clf          "CLF1" | u32 rows | u32 dim | rows*dim f32 (all little-endian)
    rasters/<id>.png           optional RGB raster (PNG or binary PPM)

Boxes use corner form with exclusive maxima, so ``area = (x_max - x_min) * (y_max - y_min)``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

FEATURE_MAGIC = b"CLF1"
MANIFEST_FORMAT = "cosparse-manifest/1"
DEFAULT_MAX_PROPOSALS = 2000


class DatasetError(ValueError):
    """A dataset file is missing, malformed, or violates an invariant."""


@dataclass(frozen=True, order=True)
class BBox:
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min < 0 or self.y_min < 0:
            raise DatasetError(f"negative box coordinate in {self.as_tuple()}")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise DatasetError(f"degenerate box {self.as_tuple()} (zero area)")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def fits(self, width: int, height: int) -> bool:
        return self.x_max <= width and self.y_max <= height

    def contains(self, other: "BBox") -> bool:
        # closed regions: shared edges count as contained
        return (
            self.x_min <= other.x_min
            and self.y_min <= other.y_min
            and self.x_max >= other.x_max
            and self.y_max >= other.y_max
        )


@dataclass(frozen=True)
class Proposal:
    box: BBox
    objectness: float


@dataclass(frozen=True, eq=False)
class ProposalSet:
    """Ordered proposals stored column-wise: ``boxes`` is (M, 4) int, ``objectness`` is (M,)."""

    boxes: np.ndarray
    objectness: np.ndarray

    def __post_init__(self):
        boxes = np.asarray(self.boxes, dtype=np.int64).reshape(-1, 4)
        obj = np.asarray(self.objectness, dtype=np.float64).reshape(-1)
        if len(boxes) != len(obj):
            raise DatasetError(f"{len(boxes)} boxes but {len(obj)} objectness values")
        boxes.setflags(write=False)
        obj.setflags(write=False)
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "objectness", obj)

    @classmethod
    def from_proposals(cls, proposals: Sequence[Proposal]) -> "ProposalSet":
        boxes = np.array([p.box.as_tuple() for p in proposals], dtype=np.int64).reshape(-1, 4)
        obj = np.array([p.objectness for p in proposals], dtype=np.float64)
        return cls(boxes, obj)

    def __len__(self) -> int:
        return len(self.objectness)

    def __getitem__(self, j: int) -> Proposal:
        return Proposal(self.box(j), float(self.objectness[j]))

    def __iter__(self) -> Iterator[Proposal]:
        return (self[j] for j in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, ProposalSet):
            return NotImplemented
        return np.array_equal(self.boxes, other.boxes) and np.array_equal(
            self.objectness, other.objectness
        )

    def box(self, j: int) -> BBox:
        return BBox(*(int(v) for v in self.boxes[j]))

    def head(self, cap: int) -> "ProposalSet":
        return ProposalSet(self.boxes[:cap], self.objectness[:cap])


@dataclass(frozen=True, eq=False)
class ImageRecord:
    id: str
    width: int
    height: int
    proposals: ProposalSet
    features: np.ndarray
    raster: np.ndarray | None = None
    ground_truth: tuple[BBox, ...] = ()

    def __eq__(self, other):
        if not isinstance(other, ImageRecord):
            return NotImplemented
        same_raster = (self.raster is None and other.raster is None) or (
            self.raster is not None
            and other.raster is not None
            and np.array_equal(self.raster, other.raster)
        )
        return (
            self.id == other.id
            and self.width == other.width
            and self.height == other.height
            and self.proposals == other.proposals
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and same_raster
            and self.ground_truth == other.ground_truth
        )

    @property
    def num_proposals(self) -> int:
        return len(self.proposals)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class DatasetManifest:
    images: tuple[ImageRecord, ...]
    root: Path | None = None

    @property
    def n(self) -> int:
        return len(self.images)

    @property
    def dim(self) -> int:
        return self.images[0].dim

    def by_id(self) -> dict[str, ImageRecord]:
        return {img.id: img for img in self.images}


# --- features -------------------------------------------------------------

def load_features(path) -> np.ndarray:
    """Read a CLF1 feature file into a float64 (rows, dim) array."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read features ({exc.strerror})") from exc
    if blob[:4] != FEATURE_MAGIC:
        raise DatasetError(f"{path}: bad magic {blob[:4]!r}, expected {FEATURE_MAGIC!r}")
    if len(blob) < 12:
        raise DatasetError(f"{path}: truncated header")
    rows, dim = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * rows * dim
    if len(blob) < expected:
        raise DatasetError(
            f"{path}: truncated payload ({len(blob) - 12} of {expected - 12} bytes)"
        )
    if len(blob) > expected:
        raise DatasetError(f"{path}: {len(blob) - expected} trailing bytes after payload")
    data = np.frombuffer(blob, dtype="<f4", count=rows * dim, offset=12).reshape(rows, dim)
    bad = np.argwhere(~np.isfinite(data))
    if len(bad):
        r, c = bad[0]
        raise DatasetError(f"{path}: non-finite value at row {r}, column {c}")
    return data.astype(np.float64)


def write_features(path, features: np.ndarray) -> None:
    feats = np.asarray(features)
    if feats.ndim != 2:
        raise DatasetError(f"features must be 2-D, got shape {feats.shape}")
    rows, dim = feats.shape
    payload = FEATURE_MAGIC + struct.pack("<II", rows, dim) + feats.astype("<f4").tobytes()
    atomic_write_bytes(path, payload)


# --- proposals ------------------------------------------------------------

def load_proposals(path) -> ProposalSet:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read proposals ({exc.strerror})") from exc
    boxes, obj = [], []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise DatasetError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            coords = [int(v) for v in parts[:4]]
            o = float(parts[4])
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        try:
            box = BBox(*coords)
        except DatasetError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        if not (np.isfinite(o) and 0.0 <= o <= 1.0):
            raise DatasetError(f"{path}:{lineno}: objectness {o} outside [0, 1]")
        boxes.append(box.as_tuple())
        obj.append(o)
    if not boxes:
        raise DatasetError(f"{path}: no proposals")
    return ProposalSet(np.array(boxes), np.array(obj))


def write_proposals(path, proposals: ProposalSet) -> None:
    lines = [
        f"{x0} {y0} {x1} {y1} {o!r}"
        for (x0, y0, x1, y1), o in zip(proposals.boxes.tolist(), proposals.objectness.tolist())
    ]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


# --- rasters --------------------------------------------------------------

def load_raster(path) -> np.ndarray:
    """Load a PNG or binary PPM as an (H, W, 3) uint8 array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read raster ({exc})") from exc


def save_image(path, pixels: np.ndarray) -> None:
    """Write a uint8 gray (H, W) or RGB (H, W, 3) array; format follows the suffix."""
    path = Path(path)
    fmt = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise DatasetError(f"{path}: unsupported image suffix")
    arr = np.ascontiguousarray(pixels, dtype=np.uint8)
    img = Image.fromarray(arr, mode="L" if arr.ndim == 2 else "RGB")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            img.save(fh, format=fmt)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


# --- manifest -------------------------------------------------------------

def load_manifest(path, max_proposals: int = DEFAULT_MAX_PROPOSALS) -> DatasetManifest:
    """Load and eagerly validate every image a manifest references.

    Proposal files longer than ``max_proposals`` are cut to their first
    ``max_proposals`` records (proposal generators emit ranked lists), and the
    matching feature rows are cut with them.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read manifest ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: malformed manifest ({exc})") from exc
    if max_proposals < 1:
        raise DatasetError(f"max_proposals must be >= 1, got {max_proposals}")
    entries = doc.get("images") if isinstance(doc, dict) else None
    if not entries:
        raise DatasetError(f"{path}: manifest lists no images")

    root = path.parent
    images, seen, dim = [], set(), None
    for idx, entry in enumerate(entries):
        img = _load_image_entry(root, entry, idx, max_proposals)
        if img.id in seen:
            raise DatasetError(f"{path}: duplicate image id {img.id!r}")
        seen.add(img.id)
        if dim is None:
            dim = img.dim
        elif img.dim != dim:
            raise DatasetError(f"image {img.id!r}: features: dim {img.dim} != dataset dim {dim}")
        images.append(img)
    return DatasetManifest(tuple(images), root)


def _load_image_entry(root: Path, entry, idx: int, max_proposals: int) -> ImageRecord:
    if not isinstance(entry, dict):
        raise DatasetError(f"manifest record {idx}: not an object")
    image_id = entry.get("id")
    if not isinstance(image_id, str) or not image_id:
        raise DatasetError(f"manifest record {idx}: id: missing or not a string")

    def fail(fieldname, msg):
        raise DatasetError(f"image {image_id!r}: {fieldname}: {msg}")

    for key in ("width", "height", "proposals", "features"):
        if key not in entry:
            fail(key, "missing")
    width, height = entry["width"], entry["height"]
    for key, val in (("width", width), ("height", height)):
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            fail(key, f"must be a positive integer, got {val!r}")

    try:
        props = load_proposals(root / entry["proposals"])
        feats = load_features(root / entry["features"])
    except DatasetError as exc:
        fail("proposals/features", str(exc))
    if feats.shape[0] != len(props):
        fail("features", f"{feats.shape[0]} feature rows but {len(props)} proposals")
    if len(props) > max_proposals:
        props, feats = props.head(max_proposals), feats[:max_proposals]
    out = ~((props.boxes[:, 2] <= width) & (props.boxes[:, 3] <= height))
    if out.any():
        j = int(np.flatnonzero(out)[0])
        fail("proposals", f"box {j} {props.box(j).as_tuple()} outside {width}x{height}")

    raster = None
    if entry.get("raster"):
        raster = load_raster(root / entry["raster"])
        if raster.shape[:2] != (height, width):
            fail("raster", f"size {raster.shape[1]}x{raster.shape[0]} != {width}x{height}")

    gts = []
    for k, coords in enumerate(entry.get("ground_truth") or []):
        try:
            box = BBox(*(int(v) for v in coords))
        except (TypeError, ValueError) as exc:
            fail("ground_truth", f"box {k}: {exc}")
        if not box.fits(width, height):
            fail("ground_truth", f"box {k} {box.as_tuple()} outside {width}x{height}")
        gts.append(box)

    feats.setflags(write=False)
    return ImageRecord(image_id, width, height, props, feats, raster, tuple(gts))


def write_manifest(path, records: Sequence[dict], extra: dict | None = None) -> None:
    doc = {"format": MANIFEST_FORMAT, **(extra or {}), "images": list(records)}
    atomic_write_bytes(path, (json.dumps(doc, indent=1, sort_keys=False) + "\n").encode())


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


# --- synthetic planted-signal data ----------------------------------------

@dataclass
class SynthConfig:
    """Knobs for :func:`generate_synthetic`.

    Every image gets one planted proposal with features ``signal * u + noise``
    (``u`` a unit vector shared by all images); all other proposals are pure
    isotropic noise. Objectness is i.i.d. uniform on ``objectness_range`` for
    every proposal, planted or not. The planted proposal is written somewhere
    in the first ``planted_rank_fraction`` of each proposal file, mimicking a
    ranked proposal list whose recall saturates early.
    """

    n_images: int = 50
    n_proposals: int = 100
    dim: int = 64
    signal: float = 40.0
    noise: float = 4.0
    seed: int = 0
    width: int = 64
    height: int = 64
    objectness_range: tuple[float, float] = (0.5, 1.0)
    planted_rank_fraction: float = 0.25
    rasters: bool = True
    n_clutter: int = 2

    def validate(self) -> None:
        if self.n_images < 1:
            raise DatasetError(f"n_images must be >= 1, got {self.n_images}")
        if self.n_proposals < 2:
            raise DatasetError(f"n_proposals must be >= 2, got {self.n_proposals}")
        if self.dim < 1:
            raise DatasetError(f"dim must be >= 1, got {self.dim}")
        if self.noise < 0 or not np.isfinite(self.noise):
            raise DatasetError(f"noise must be finite and >= 0, got {self.noise}")
        lo, hi = self.objectness_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise DatasetError(f"objectness_range {self.objectness_range} not within [0, 1]")
        if not 0.0 < self.planted_rank_fraction <= 1.0:
            raise DatasetError("planted_rank_fraction must be in (0, 1]")
        if self.width < 4 or self.height < 4:
            raise DatasetError("images must be at least 4x4")


# common object color; background/clutter colors are kept away from it
_OBJECT_RGB = np.array([220.0, 40.0, 40.0])


def _random_box(rng: np.random.Generator, width: int, height: int, lo: float, hi: float) -> BBox:
    bw = max(1, int(round(rng.uniform(lo, hi) * width)))
    bh = max(1, int(round(rng.uniform(lo, hi) * height)))
    x0 = int(rng.integers(0, width - bw + 1))
    y0 = int(rng.integers(0, height - bh + 1))
    return BBox(x0, y0, x0 + bw, y0 + bh)


def _far_color(rng: np.random.Generator) -> np.ndarray:
    while True:
        c = rng.uniform(0, 255, size=3)
        if np.linalg.norm(c - _OBJECT_RGB) > 150:
            return c


def generate_synthetic(config: SynthConfig, out_dir) -> DatasetManifest:
    """Write a planted-signal dataset to ``out_dir`` and return it in memory.

    The returned manifest is built from the values as stored on disk (features
    rounded to float32), so ``load_manifest(out_dir)`` compares equal to it.
    """
    config.validate()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise DatasetError(f"{out_dir}: not writable ({exc.strerror})") from exc

    rng = np.random.default_rng(config.seed)
    u = rng.standard_normal(config.dim)
    u /= np.linalg.norm(u)
    W, H, M = config.width, config.height, config.n_proposals
    n_digits = len(str(config.n_images - 1))
    planted_ranks = max(1, int(M * config.planted_rank_fraction))

    records, images = [], []
    for i in range(config.n_images):
        image_id = f"img{i:0{n_digits}d}"
        gt = _random_box(rng, W, H, 0.3, 0.6)
        planted = int(rng.integers(0, planted_ranks))
        boxes = [_random_box(rng, W, H, 0.1, 0.9) for _ in range(M)]
        boxes[planted] = gt
        lo, hi = config.objectness_range
        obj = rng.uniform(lo, hi, size=M)
        feats = config.noise * rng.standard_normal((M, config.dim))
        feats[planted] += config.signal * u
        feats32 = feats.astype(np.float32).astype(np.float64)
        props = ProposalSet(np.array([b.as_tuple() for b in boxes]), obj)

        rel_props = f"proposals/{image_id}.txt"
        rel_feats = f"features/{image_id}.clf"
        write_proposals(out_dir / rel_props, props)
        write_features(out_dir / rel_feats, feats32)
        record = {
            "id": image_id,
            "width": W,
            "height": H,
            "proposals": rel_props,
            "features": rel_feats,
            "ground_truth": [list(gt.as_tuple())],
        }

        raster = None
        if config.rasters:
            raster = _render_raster(rng, config, gt, boxes, planted)
            rel_raster = f"rasters/{image_id}.png"
            save_image(out_dir / rel_raster, raster)
            record["raster"] = rel_raster

        feats32.setflags(write=False)
        records.append(record)
        images.append(ImageRecord(image_id, W, H, props, feats32, raster, (gt,)))

    meta = {"synth_config": asdict(config)}
    write_manifest(out_dir / "manifest.json", records, extra=meta)
    return DatasetManifest(tuple(images), out_dir)


def _render_raster(rng, config: SynthConfig, gt: BBox, boxes, planted: int) -> np.ndarray:
    H, W = config.height, config.width
    img = np.empty((H, W, 3))
    img[:] = _far_color(rng)
    others = [j for j in range(len(boxes)) if j != planted]
    for j in rng.permutation(others)[: config.n_clutter]:
        b = boxes[j]
        cx0, cy0 = b.x_min, b.y_min
        cx1, cy1 = min(b.x_max, cx0 + W // 4), min(b.y_max, cy0 + H // 4)
        img[cy0:cy1, cx0:cx1] = _far_color(rng)
    # object painted last so clutter never hides it
    img[gt.y_min:gt.y_max, gt.x_min:gt.x_max] = _OBJECT_RGB
    img += rng.normal(0.0, 3.0, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)

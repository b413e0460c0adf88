"""Common-object detector trained to make per-image score distributions sparse.

Each proposal gets ``s = o * softplus(w . phi + b)`` (``o`` the objectness,
or 1 when objectness weighting is off). Scores inside an image are smoothed by
``epsilon`` and normalized to a distribution ``p``; training minimizes the mean
Shannon entropy of those distributions plus ``lam * ||w||^2`` with plain SGD
over mini-batches of images.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dataset_io import BBox, DatasetManifest, ImageRecord, ProposalSet, atomic_write_bytes

DETECTOR_FORMAT = "cosparse-detector/1"


class DimensionError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0
    epsilon: float = 1e-2
    lr_initial: float = 0.1
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 10
    total_epochs: int = 20
    batch_size: int = 16
    init_sigma: float = 0.01
    seed: int = 0
    use_objectness: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.lr_initial <= 0:
            raise ValueError(f"lr_initial must be > 0, got {self.lr_initial}")
        if self.lr_decay_factor <= 0 or self.lr_decay_every < 1:
            raise ValueError("lr_decay_factor must be > 0 and lr_decay_every >= 1")
        if self.total_epochs < 0:
            raise ValueError(f"total_epochs must be >= 0, got {self.total_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.init_sigma < 0:
            raise ValueError(f"init_sigma must be >= 0, got {self.init_sigma}")

    def learning_rate(self, epoch: int) -> float:
        """Step size used throughout zero-based ``epoch``."""
        return self.lr_initial / self.lr_decay_factor ** (epoch // self.lr_decay_every)


@dataclass(frozen=True, eq=False)
class Detector:
    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(w)) and math.isfinite(self.b)):
            raise ValueError("detector parameters must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))

    def __eq__(self, other):
        if not isinstance(other, Detector):
            return NotImplemented
        return self.b == other.b and np.array_equal(self.w, other.w)

    @property
    def dim(self) -> int:
        return len(self.w)

    @classmethod
    def zeros(cls, dim: int) -> "Detector":
        return cls(np.zeros(dim), 0.0)


@dataclass(frozen=True)
class DetectorGradient:
    d_w: np.ndarray
    d_b: float


@dataclass
class TrainLog:
    """Full-dataset objective before training and after every epoch."""

    objectives: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)


# --- scoring --------------------------------------------------------------

def softplus(x):
    """ln(1 + e^x), evaluated as max(x, 0) + ln(1 + e^-|x|)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _objectness_of(props) -> np.ndarray:
    return props.objectness if isinstance(props, ProposalSet) else np.asarray(props, float)


def score_proposals(
    d: Detector, feats: np.ndarray, props, use_objectness: bool = True
) -> np.ndarray:
    """Nonnegative detection scores for one image's proposals.

    ``props`` is a :class:`ProposalSet` or a bare objectness vector aligned
    with the feature rows.
    """
    feats = np.asarray(feats, dtype=np.float64)
    obj = _objectness_of(props)
    if feats.ndim != 2 or feats.shape[1] != d.dim:
        raise DimensionError(f"features of shape {feats.shape} vs detector dim {d.dim}")
    if feats.shape[0] != len(obj):
        raise DimensionError(f"{feats.shape[0]} feature rows but {len(obj)} proposals")
    s = softplus(feats @ d.w + d.b)
    return obj * s if use_objectness else s


def normalize_scores(s, epsilon: float) -> np.ndarray:
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    t = np.asarray(s, dtype=np.float64) + epsilon
    return t / t.sum()


def entropy(p) -> float:
    """Shannon entropy in nats of a strictly positive distribution."""
    p = np.asarray(p, dtype=np.float64)
    return float(-np.dot(p, np.log(p)))


# --- objective and gradient -----------------------------------------------

def _images(data) -> Sequence[ImageRecord]:
    return data.images if isinstance(data, DatasetManifest) else data


def image_loss(d: Detector, img: ImageRecord, cfg: TrainConfig) -> float:
    s = score_proposals(d, img.features, img.proposals, cfg.use_objectness)
    return entropy(normalize_scores(s, cfg.epsilon))


def objective(d: Detector, data, cfg: TrainConfig) -> float:
    """Mean per-image entropy plus ``lam * ||w||^2``."""
    images = _images(data)
    mean_loss = math.fsum(image_loss(d, img, cfg) for img in images) / len(images)
    return mean_loss + cfg.lam * float(np.dot(d.w, d.w))


def _image_grad(d: Detector, img: ImageRecord, cfg: TrainConfig) -> tuple[np.ndarray, float]:
    feats = img.features
    if feats.shape[1] != d.dim:
        raise DimensionError(f"image {img.id!r}: feature dim {feats.shape[1]} vs detector {d.dim}")
    z = feats @ d.w + d.b
    weight = img.proposals.objectness if cfg.use_objectness else np.ones(len(z))
    t = weight * softplus(z) + cfg.epsilon
    total = t.sum()
    p = t / total
    log_p = np.log(p)
    loss = -np.dot(p, log_p)
    # dL/dt_k = -(log p_k + L) / T ; dt_k/dz_k = o_k * sigmoid(z_k)
    dz = -(log_p + loss) / total * weight * _sigmoid(z)
    return feats.T @ dz, float(dz.sum())


def gradient(d: Detector, batch: Sequence[ImageRecord], cfg: TrainConfig) -> DetectorGradient:
    """Exact gradient of the batch-mean entropy plus the L2 penalty on ``w``."""
    if not batch:
        raise ValueError("gradient of an empty batch")
    d_w = np.zeros(d.dim)
    d_b = 0.0
    for img in batch:
        gw, gb = _image_grad(d, img, cfg)
        d_w += gw
        d_b += gb
    n = len(batch)
    return DetectorGradient(d_w / n + 2.0 * cfg.lam * d.w, d_b / n)


# --- training -------------------------------------------------------------

def init_detector(dim: int, cfg: TrainConfig, rng: np.random.Generator) -> Detector:
    return Detector(rng.normal(0.0, cfg.init_sigma, size=dim), 0.0)


def train(data, cfg: TrainConfig, log=None) -> tuple[Detector, TrainLog]:
    """Mini-batch SGD over images with a step-decayed learning rate.

    Deterministic for a fixed ``cfg.seed``: the seed drives both the Gaussian
    initialization of ``w`` and the per-epoch shuffle of images.
    ``log`` is an optional callable receiving ``(epoch, lr, objective)``.
    """
    images = list(_images(data))
    if not images:
        raise ValueError("cannot train on an empty dataset")
    dim = images[0].dim
    for img in images:
        if img.dim != dim:
            raise DimensionError(f"image {img.id!r}: feature dim {img.dim} != {dim}")

    rng = np.random.default_rng(cfg.seed)
    d = init_detector(dim, cfg, rng)
    history = TrainLog([objective(d, images, cfg)])

    for epoch in range(cfg.total_epochs):
        lr = cfg.learning_rate(epoch)
        order = rng.permutation(len(images))
        for start in range(0, len(images), cfg.batch_size):
            batch = [images[k] for k in order[start:start + cfg.batch_size]]
            g = gradient(d, batch, cfg)
            w_new = d.w - lr * g.d_w
            b_new = d.b - lr * g.d_b
            if not (np.all(np.isfinite(w_new)) and math.isfinite(b_new)):
                raise TrainingDiverged(f"non-finite parameters in epoch {epoch} (lr {lr:g})")
            d = Detector(w_new, b_new)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            obj = objective(d, images, cfg)
        if not math.isfinite(obj):
            raise TrainingDiverged(f"non-finite objective after epoch {epoch} (lr {lr:g})")
        history.objectives.append(obj)
        history.learning_rates.append(lr)
        if log is not None:
            log(epoch, lr, obj)
    return d, history


# --- localization by top proposal -----------------------------------------

def top_proposal_index(scores) -> int:
    """Index of the maximum score; ``np.argmax`` already returns the first on ties."""
    scores = np.asarray(scores)
    if scores.size == 0:
        raise ValueError("image has no proposals")
    return int(np.argmax(scores))


def select_top_proposal(d: Detector, img: ImageRecord, use_objectness: bool = True) -> BBox:
    if img.num_proposals == 0:
        raise ValueError(f"image {img.id!r} has no proposals")
    s = score_proposals(d, img.features, img.proposals, use_objectness)
    return img.proposals.box(top_proposal_index(s))


# --- serialization --------------------------------------------------------

def save_detector(path, d: Detector, cfg: TrainConfig | None = None) -> None:
    doc = {
        "format": DETECTOR_FORMAT,
        "K": d.dim,
        # repr() of a float round-trips exactly
        "w": [float(v) for v in d.w],
        "b": d.b,
        "train_config": asdict(cfg) if cfg is not None else None,
    }
    atomic_write_bytes(path, (json.dumps(doc, indent=1) + "\n").encode())


def load_detector(path) -> tuple[Detector, TrainConfig | None]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValueError(f"{path}: cannot read detector ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed detector file ({exc})") from exc
    w = np.array(doc["w"], dtype=np.float64)
    if len(w) != doc.get("K", len(w)):
        raise ValueError(f"{path}: K={doc['K']} but {len(w)} weights")
    cfg = TrainConfig(**doc["train_config"]) if doc.get("train_config") else None
    return Detector(w, doc["b"]), cfg

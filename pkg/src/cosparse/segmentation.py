"""Heat-map driven superpixel graph-cut refinement of a localization.

Superpixels become nodes of a binary MRF. Unary costs are ``-log H(m)`` for
foreground and ``-log(1 - H(m))`` for background, ``H(m)`` being the mean heat
inside superpixel ``m``; neighbouring superpixels pay
``exp(-beta * ||C(m) - C(n)||^2)`` for disagreeing labels, ``C`` being a color
histogram. The energy is submodular and is minimized exactly by an s-t min cut.
"""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np
from skimage.segmentation import felzenszwalb

from .dataset_io import BBox, ImageRecord
from .detector import Detector, score_proposals, top_proposal_index
from .heatmap import accumulate_heatmap, normalize_heatmap


@dataclass(frozen=True)
class SegParams:
    beta: float = 10.0
    clamp_delta: float = 1e-4
    fh_sigma: float = 0.5
    fh_k: float = 300.0
    fh_min_size: int = 100
    hist_bins: int = 16

    def __post_init__(self):
        if not 0.0 < self.clamp_delta < 0.5:
            raise ValueError(f"clamp_delta must lie in (0, 0.5), got {self.clamp_delta}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if 256 % self.hist_bins:
            raise ValueError("hist_bins must divide 256")


@dataclass(frozen=True, eq=False)
class Superpixel:
    id: int
    rows: np.ndarray
    cols: np.ndarray
    centroid: tuple[float, float]  # (x, y)
    major_axis_length: float
    color_histogram: np.ndarray

    @property
    def size(self) -> int:
        return len(self.rows)


class NonSubmodularError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EnergyModel:
    """``unary[m] = (cost of y_m = 0, cost of y_m = 1)``; ``edges[e] = (m, n)`` with weight ``weights[e]``."""

    unary: np.ndarray
    edges: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        unary = np.asarray(self.unary, dtype=np.float64).reshape(-1, 2)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(edges) != len(weights):
            raise ValueError(f"{len(edges)} edges but {len(weights)} weights")
        if not np.all(np.isfinite(unary)):
            raise ValueError("unary costs must be finite")
        if len(edges) and (edges.min() < 0 or edges.max() >= len(unary)):
            raise ValueError("edge refers to a missing node")
        object.__setattr__(self, "unary", unary)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return len(self.unary)

    def energy(self, labels) -> float:
        y = np.asarray(labels, dtype=np.int64)
        e = self.unary[np.arange(self.n), y].sum()
        if len(self.edges):
            e += self.weights[y[self.edges[:, 0]] != y[self.edges[:, 1]]].sum()
        return float(e)


@dataclass(frozen=True, eq=False)
class LabelAssignment:
    labels: np.ndarray
    energy: float


# --- superpixels ----------------------------------------------------------

def compute_superpixels(
    raster: np.ndarray,
    scale: float = 300.0,
    min_size: int = 100,
    sigma: float = 0.5,
    hist_bins: int = 16,
) -> list[Superpixel]:
    """Felzenszwalb-Huttenlocher superpixels with per-region moments and color histograms."""
    raster = np.asarray(raster)
    if raster.ndim != 3 or raster.shape[2] != 3 or raster.size == 0:
        raise ValueError(f"expected a nonempty (H, W, 3) raster, got shape {raster.shape}")
    seg = felzenszwalb(raster, scale=scale, sigma=sigma, min_size=min_size, channel_axis=-1)
    return superpixels_from_labels(seg, raster, hist_bins)


def superpixels_from_labels(
    labels: np.ndarray, raster: np.ndarray, hist_bins: int = 16
) -> list[Superpixel]:
    """Build superpixel records from any label map; ids follow first appearance in raster order."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels.ravel(), return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    flat = rank[inverse]
    order = np.argsort(flat, kind="stable")
    bounds = np.cumsum(np.bincount(flat))[:-1]
    width = labels.shape[1]
    binned = np.asarray(raster, dtype=np.int64).reshape(-1, 3) // (256 // hist_bins)

    nodes = []
    for sp_id, members in enumerate(np.split(order, bounds)):
        rows, cols = np.divmod(members, width)
        nodes.append(
            Superpixel(
                id=sp_id,
                rows=rows,
                cols=cols,
                centroid=(float(cols.mean()), float(rows.mean())),
                major_axis_length=_major_axis(rows, cols),
                color_histogram=_color_histogram(binned[members], hist_bins),
            )
        )
    return nodes


def _major_axis(rows: np.ndarray, cols: np.ndarray) -> float:
    # 4 * sqrt(largest eigenvalue) of the coordinate covariance: the same-second-moment ellipse
    coords = np.stack([cols, rows]).astype(np.float64)
    centered = coords - coords.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / coords.shape[1]
    lam_max = max(float(np.linalg.eigvalsh(cov)[-1]), 0.0)
    return 4.0 * np.sqrt(lam_max)


def _color_histogram(binned: np.ndarray, bins: int) -> np.ndarray:
    hist = np.concatenate([np.bincount(binned[:, c], minlength=bins) for c in range(3)])
    return hist / hist.sum()


def label_map(nodes: list[Superpixel], shape: tuple[int, int]) -> np.ndarray:
    out = np.full(shape, -1, dtype=np.int64)
    for sp in nodes:
        out[sp.rows, sp.cols] = sp.id
    return out


# --- graph and potentials -------------------------------------------------

def build_adjacency(nodes: list[Superpixel]) -> list[tuple[int, int]]:
    """Pairs ``(m, n)``, ``m < n``, whose centroid distance is below the summed major axes."""
    if len(nodes) < 2:
        return []
    centroids = np.array([sp.centroid for sp in nodes])
    axes = np.array([sp.major_axis_length for sp in nodes])
    dist = np.linalg.norm(centroids[:, None, :] - centroids[None, :, :], axis=-1)
    linked = dist < axes[:, None] + axes[None, :]
    m, n = np.nonzero(np.triu(linked, k=1))
    return list(zip(m.tolist(), n.tolist()))


def superpixel_heat(nodes: list[Superpixel], heat: np.ndarray) -> np.ndarray:
    return np.array([heat[sp.rows, sp.cols].mean() for sp in nodes])


def unary_potentials(nodes: list[Superpixel], heat: np.ndarray, clamp_delta: float = 1e-4) -> np.ndarray:
    """(n, 2) array of ``(cost of background, cost of foreground)`` per superpixel."""
    if not 0.0 < clamp_delta < 0.5:
        raise ValueError(f"clamp_delta must lie in (0, 0.5), got {clamp_delta}")
    h = np.clip(superpixel_heat(nodes, heat), clamp_delta, 1.0 - clamp_delta)
    return np.stack([-np.log1p(-h), -np.log(h)], axis=1)


def pairwise_weights(nodes: list[Superpixel], edges, beta: float = 10.0) -> np.ndarray:
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if not len(edges):
        return np.zeros(0)
    hists = np.stack([sp.color_histogram for sp in nodes])
    e = np.asarray(edges)
    sq = ((hists[e[:, 0]] - hists[e[:, 1]]) ** 2).sum(axis=1)
    return np.exp(-beta * sq)


# --- exact minimization ---------------------------------------------------

def min_cut_segment(model: EnergyModel) -> LabelAssignment:
    """Global minimizer of a submodular binary energy via s-t min cut.

    Source-side nodes are labelled 1: source->m carries the cost of y_m = 0,
    m->sink the cost of y_m = 1, and each pairwise term becomes a pair of
    opposing arcs of capacity equal to its weight.
    """
    if np.any(model.weights < 0):
        raise NonSubmodularError("negative pairwise weight: energy is not submodular")
    # per-node constant shift keeps every terminal capacity nonnegative
    shifted = model.unary - model.unary.min(axis=1, keepdims=True)

    g = nx.DiGraph()
    src, sink = "s", "t"
    g.add_node(src)
    g.add_node(sink)
    for m in range(model.n):
        g.add_edge(src, m, capacity=float(shifted[m, 0]))
        g.add_edge(m, sink, capacity=float(shifted[m, 1]))
    for (m, n), w in zip(model.edges.tolist(), model.weights.tolist()):
        if m == n:
            continue
        for a, b in ((m, n), (n, m)):
            if g.has_edge(a, b):
                g[a][b]["capacity"] += w
            else:
                g.add_edge(a, b, capacity=w)

    _, (source_side, _) = nx.minimum_cut(g, src, sink)
    labels = np.zeros(model.n, dtype=np.int64)
    labels[[m for m in source_side if m != src]] = 1
    return LabelAssignment(labels, model.energy(labels))


def bbox_from_labels(labels, nodes: list[Superpixel]) -> BBox | None:
    """Tightest box around all foreground superpixels, or None when nothing is foreground."""
    labels = labels.labels if isinstance(labels, LabelAssignment) else np.asarray(labels)
    fg = [sp for sp, y in zip(nodes, labels) if y == 1]
    if not fg:
        return None
    rows = np.concatenate([sp.rows for sp in fg])
    cols = np.concatenate([sp.cols for sp in fg])
    return BBox(int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)


# --- full per-image chain -------------------------------------------------

@dataclass(frozen=True, eq=False)
class Segmentation:
    box: BBox
    heat: np.ndarray
    nodes: list[Superpixel]
    assignment: LabelAssignment
    fell_back: bool

    def mask(self) -> np.ndarray:
        out = np.zeros(self.heat.shape, dtype=bool)
        for sp, y in zip(self.nodes, self.assignment.labels):
            if y == 1:
                out[sp.rows, sp.cols] = True
        return out


def segment_image(img: ImageRecord, scores, params: SegParams = SegParams()) -> Segmentation:
    """Heat map -> superpixels -> graph cut -> covering box for one image.

    ``scores`` are the per-proposal confidences feeding the heat map. When the
    cut labels nothing as foreground, the top-scoring proposal is returned.
    """
    if img.raster is None:
        raise ValueError(f"image {img.id!r}: raster required for segmentation")
    heat = normalize_heatmap(accumulate_heatmap(img.width, img.height, img.proposals, scores))
    nodes = compute_superpixels(
        img.raster, params.fh_k, params.fh_min_size, params.fh_sigma, params.hist_bins
    )
    edges = build_adjacency(nodes)
    model = EnergyModel(
        unary_potentials(nodes, heat, params.clamp_delta),
        np.array(edges, dtype=np.int64).reshape(-1, 2),
        pairwise_weights(nodes, edges, params.beta),
    )
    assignment = min_cut_segment(model)
    box = bbox_from_labels(assignment, nodes)
    fell_back = box is None
    if fell_back:
        box = img.proposals.box(top_proposal_index(scores))
    return Segmentation(box, heat, nodes, assignment, fell_back)


def localize(
    img: ImageRecord,
    d: Detector | None,
    params: SegParams = SegParams(),
    use_objectness: bool = True,
) -> BBox:
    """Refined box for one image; ``d=None`` feeds raw objectness into the heat map instead."""
    if d is None:
        scores = img.proposals.objectness
    else:
        scores = score_proposals(d, img.features, img.proposals, use_objectness)
    return segment_image(img, scores, params).box

"""Bounding-box geometry: normalization, pairwise edge features, sight graphs.

Everything here is pure and operates on page-normalized coordinates, so the
same code serves parsing-time checks, feature construction and the graph
builder. The 14-dimensional edge feature vector is laid out as

    [d_h, d_v, d_e, r_inter, r_outer, r_interouter,
     src.x0, src.y0, src.x1, src.y1, dst.x0, dst.y0, dst.x1, dst.y1]

and the adjacency produced by :func:`line_of_sight_graph` connects two boxes
when one can "see" the other along an axis-aligned band that crosses no third
box's interior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .documents import BBox

EDGE_FEATURE_DIM = 14


@dataclass(frozen=True)
class NormalizedBBox:
    """Axis-aligned box with coordinates in the unit square."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.x0 <= self.x1 <= 1.0):
            raise ValueError(f"x coordinates out of order or outside [0, 1]: {self}")
        if not (0.0 <= self.y0 <= self.y1 <= 1.0):
            raise ValueError(f"y coordinates out of order or outside [0, 1]: {self}")

    @property
    def w(self) -> float:
        return self.x1 - self.x0

    @property
    def h(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Adjacency:
    """Undirected edge list over ``n`` nodes; pairs are (i, j) with i < j."""

    n: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < j < self.n):
                raise ValueError(f"edge ({i}, {j}) invalid for {self.n} nodes")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))

    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.edges)

    def neighbor_counts(self) -> list[int]:
        counts = [0] * self.n
        for i, j in self.edges:
            counts[i] += 1
            counts[j] += 1
        return counts


def normalize_bbox(box: BBox, page_width: int, page_height: int) -> NormalizedBBox:
    """Scale a pixel box to unit coordinates by dividing by the page size."""
    if page_width <= 0 or page_height <= 0:
        raise ValueError(f"page dimensions must be positive, got {page_width}x{page_height}")
    return NormalizedBBox(
        box.x0 / page_width,
        box.y0 / page_height,
        box.x1 / page_width,
        box.y1 / page_height,
    )


def box_distances(a: NormalizedBBox, b: NormalizedBBox) -> tuple[float, float, float]:
    """Return (horizontal, vertical, Euclidean) gaps between two boxes.

    Each axis gap is the distance between the boxes' projection intervals on
    that axis, 0 when they overlap; the Euclidean value is the closest-point
    distance, i.e. hypot of the two gaps.
    """
    d_h = max(a.x0 - b.x1, b.x0 - a.x1, 0.0)
    d_v = max(a.y0 - b.y1, b.y0 - a.y1, 0.0)
    return d_h, d_v, math.hypot(d_h, d_v)


def area_ratios(a: NormalizedBBox, b: NormalizedBBox) -> tuple[float, float, float]:
    """Return (r_inter, r_outer, r_interouter) for a pair of boxes.

    With E the smallest axis-aligned box enclosing both, and I the
    intersection area: r_inter = I / area(E), r_outer = (area(a) + area(b))
    / area(E), and r_interouter is plain intersection-over-union. A
    degenerate enclosing box (zero area) makes all three 0.
    """
    enclosing = (max(a.x1, b.x1) - min(a.x0, b.x0)) * (max(a.y1, b.y1) - min(a.y0, b.y0))
    if enclosing <= 0.0:
        return 0.0, 0.0, 0.0
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = max(iw, 0.0) * max(ih, 0.0)
    total = a.area + b.area
    union = total - inter
    r_interouter = inter / union if union > 0.0 else 0.0
    return inter / enclosing, total / enclosing, r_interouter


def edge_features(src: NormalizedBBox, dst: NormalizedBBox) -> np.ndarray:
    """The 14-dimensional geometric feature vector for a directed edge."""
    d_h, d_v, d_e = box_distances(src, dst)
    r_inter, r_outer, r_io = area_ratios(src, dst)
    return np.array(
        [
            d_h, d_v, d_e,
            r_inter, r_outer, r_io,
            src.x0, src.y0, src.x1, src.y1,
            dst.x0, dst.y0, dst.x1, dst.y1,
        ],
        dtype=np.float64,
    )


def _open_intervals_intersect(a0: float, a1: float, b0: float, b1: float) -> bool:
    # Open-interval test: empty (degenerate) intervals never intersect anything.
    return max(a0, b0) < min(a1, b1)


def line_of_sight_graph(boxes: Sequence[NormalizedBBox]) -> Adjacency:
    """Connect boxes that see each other along an axis-aligned band.

    Two boxes are neighbors iff their projections overlap with positive
    length on some axis and the open band spanned by that overlap and the gap
    on the other axis intersects no third box's interior. Boxes whose
    projections overlap on both axes (i.e. overlapping boxes) are always
    connected; blocking uses open interiors, so touching does not block.
    """
    n = len(boxes)
    if n < 2:
        return Adjacency(n, ())

    x0 = np.array([b.x0 for b in boxes])
    y0 = np.array([b.y0 for b in boxes])
    x1 = np.array([b.x1 for b in boxes])
    y1 = np.array([b.y1 for b in boxes])

    edges: list[tuple[int, int]] = []
    for i in range(n - 1):
        for j in range(i + 1, n):
            x_overlap = min(x1[i], x1[j]) - max(x0[i], x0[j])
            y_overlap = min(y1[i], y1[j]) - max(y0[i], y0[j])
            if x_overlap > 0.0 and y_overlap > 0.0:
                edges.append((i, j))
                continue
            if y_overlap > 0.0:
                band = (min(x1[i], x1[j]), max(x0[i], x0[j]),
                        max(y0[i], y0[j]), min(y1[i], y1[j]))
            elif x_overlap > 0.0:
                band = (max(x0[i], x0[j]), min(x1[i], x1[j]),
                        min(y1[i], y1[j]), max(y0[i], y0[j]))
            else:
                continue  # purely diagonal pair
            bx0, bx1, by0, by1 = band
            blocked = (
                (np.maximum(x0, bx0) < np.minimum(x1, bx1))
                & (np.maximum(y0, by0) < np.minimum(y1, by1))
            )
            blocked[i] = blocked[j] = False
            if not blocked.any():
                edges.append((i, j))
    return Adjacency(n, tuple(edges))


def directed_edge_arrays(
    boxes: Sequence[NormalizedBBox], adjacency: Adjacency
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Expand an undirected adjacency into directed (dst, src, features) arrays.

    Each undirected edge {i, j} yields two rows: one aggregating at i with the
    (i -> j)-oriented features, one at j with the flipped orientation. ``dst``
    is the node collecting the message, ``src`` the neighbor supplying it.
    """
    dst: list[int] = []
    src: list[int] = []
    feats: list[np.ndarray] = []
    for i, j in adjacency.edges:
        dst.append(i)
        src.append(j)
        feats.append(edge_features(boxes[i], boxes[j]))
        dst.append(j)
        src.append(i)
        feats.append(edge_features(boxes[j], boxes[i]))
    feat_matrix = (
        np.stack(feats) if feats else np.zeros((0, EDGE_FEATURE_DIM), dtype=np.float64)
    )
    return (
        np.asarray(dst, dtype=np.intp),
        np.asarray(src, dtype=np.intp),
        feat_matrix,
    )


def write_graph_dump(edges_path, features_path, doc_id: str,
                     boxes: Sequence[NormalizedBBox], adjacency: Adjacency) -> None:
    """Dump an adjacency and its per-edge features as TSV, for debugging."""
    with open(edges_path, "w", encoding="utf-8") as fh:
        for i, j in adjacency.edges:
            fh.write(f"{doc_id}\t{i}\t{j}\n")
    with open(features_path, "w", encoding="utf-8") as fh:
        for i, j in adjacency.edges:
            row = edge_features(boxes[i], boxes[j])
            fh.write("\t".join(format(v, ".12g") for v in row) + "\n")

"""Bounding-box geometry: IoU, generalized IoU, the composite box cost and
greedy NMS clustering.

Boxes live in normalized center form ``(cx, cy, w, h)`` with every component
in ``[0, 1]``; geometry is computed on the corner form, clamped to the unit
square. All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_nonnegative, check_unit_interval


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box as normalized center/size components."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            object.__setattr__(self, name, check_unit_interval(getattr(self, name), f"BBox.{name}"))

    def corners(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max), clamped to the unit square."""
        x0 = min(max(self.cx - self.w / 2.0, 0.0), 1.0)
        y0 = min(max(self.cy - self.h / 2.0, 0.0), 1.0)
        x1 = min(max(self.cx + self.w / 2.0, 0.0), 1.0)
        y1 = min(max(self.cy + self.h / 2.0, 0.0), 1.0)
        return x0, y0, x1, y1

    def area(self) -> float:
        x0, y0, x1, y1 = self.corners()
        return max(x1 - x0, 0.0) * max(y1 - y0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    @staticmethod
    def from_corners(x0: float, y0: float, x1: float, y1: float) -> "BBox":
        return BBox((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class BoxCostWeights:
    """Weights of the two terms of the composite box cost."""

    iou_weight: float = 1.0
    l1_weight: float = 2.0

    def __post_init__(self):
        check_nonnegative(self.iou_weight, "iou_weight")
        check_nonnegative(self.l1_weight, "l1_weight")


def _intersection_area(a: BBox, b: BBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union in [0, 1]; zero-area inputs yield 0."""
    inter = _intersection_area(a, b)
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    """Generalized IoU: IoU minus the enclosing-box penalty, in (-1, 1]."""
    inter = _intersection_area(a, b)
    union = a.area() + b.area() - inter
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    enclosing = (max(ax1, bx1) - min(ax0, bx0)) * (max(ay1, by1) - min(ay0, by0))
    iou_val = inter / union if union > 0.0 else 0.0
    if enclosing <= 0.0:
        # both boxes degenerate to the same point
        return iou_val
    return iou_val - (enclosing - union) / enclosing


def box_cost(a: BBox, b: BBox, weights: BoxCostWeights) -> float:
    """Composite box cost: iou_weight * (1 - GIoU) + l1_weight * ||a - b||_1.

    The L1 term is taken on the raw (cx, cy, w, h) 4-vectors.
    """
    l1 = float(np.abs(a.as_array() - b.as_array()).sum())
    return weights.iou_weight * (1.0 - giou(a, b)) + weights.l1_weight * l1


@dataclass(frozen=True)
class Cluster:
    """One NMS cluster: index of the surviving box plus all member indices.

    ``members`` includes the representative and preserves input order.
    """

    representative: int
    members: tuple[int, ...]


def nms_cluster(dets: list[tuple[BBox, float]], iou_threshold: float = 0.5) -> list[Cluster]:
    """Greedy NMS by descending score, keeping suppressed boxes as cluster
    members of the box that suppressed them.

    Ties in score are broken by lower input index. Returns clusters in order
    of their representatives' selection (i.e. descending score).
    """
    if not (0.0 < iou_threshold < 1.0):
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    for _, score in dets:
        if not np.isfinite(score):
            raise ValueError("detection scores must be finite")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    alive = [True] * len(dets)
    clusters = []
    for idx in order:
        if not alive[idx]:
            continue
        alive[idx] = False
        members = [idx]
        rep_box = dets[idx][0]
        for other in order:
            if alive[other] and iou(rep_box, dets[other][0]) > iou_threshold:
                alive[other] = False
                members.append(other)
        clusters.append(Cluster(representative=idx, members=tuple(sorted(members))))
    return clusters

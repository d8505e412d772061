"""
Bounding-box and planar geometry

Boxes are axis-aligned (left, top, width, height) in continuous pixel
coordinates. Polygons are convex with positive cross products between
consecutive edges ("counter-clockwise" in x-right, y-up terms; on screen,
where y grows downwards, the same order reads clockwise).
"""

import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

Point = Tuple[float, float]


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"Box extent must be positive, got w={self.w} h={self.h}")

    @property
    def center(self) -> Point:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class Polygon:
    """Convex polygon; an empty vertex tuple is the empty region"""
    vertices: Tuple[Point, ...] = ()

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    def __len__(self) -> int:
        return len(self.vertices)


EMPTY_REGION = Polygon(())


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 for disjoint boxes"""
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def center_distance(a: BBox, b: BBox) -> float:
    ax, ay = a.center
    bx, by = b.center
    dx = ax - bx
    dy = ay - by
    return math.sqrt(dx * dx + dy * dy)


def iou_matrix(a: Sequence[BBox], b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IOU, same arithmetic as iou() element by element"""
    if not a or not b:
        return np.zeros((len(a), len(b)), dtype=float)
    A = np.array([box.as_tuple() for box in a], dtype=float)
    B = np.array([box.as_tuple() for box in b], dtype=float)
    left = np.maximum(A[:, None, 0], B[None, :, 0])
    top = np.maximum(A[:, None, 1], B[None, :, 1])
    right = np.minimum(A[:, None, 0] + A[:, None, 2], B[None, :, 0] + B[None, :, 2])
    bottom = np.minimum(A[:, None, 1] + A[:, None, 3], B[None, :, 1] + B[None, :, 3])
    iw = right - left
    ih = bottom - top
    overlap = (iw > 0) & (ih > 0)
    inter = np.where(overlap, iw * ih, 0.0)
    union = (A[:, None, 2] * A[:, None, 3]) + (B[None, :, 2] * B[None, :, 3]) - inter
    return np.where(overlap, inter / union, 0.0)


def distance_matrix(a: Sequence[BBox], b: Sequence[BBox]) -> np.ndarray:
    if not a or not b:
        return np.zeros((len(a), len(b)), dtype=float)
    ca = np.array([box.center for box in a], dtype=float)
    cb = np.array([box.center for box in b], dtype=float)
    dx = ca[:, None, 0] - cb[None, :, 0]
    dy = ca[:, None, 1] - cb[None, :, 1]
    return np.sqrt(dx * dx + dy * dy)


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Iterable[Point]) -> Polygon:
    """
    Monotone-chain convex hull.

    Returns the hull counter-clockwise starting from the lowest-x (then
    lowest-y) point, without collinear boundary points. Fewer than three
    distinct points, or all-collinear input, yields EMPTY_REGION.
    """
    pts = sorted(set((float(p[0]), float(p[1])) for p in points))
    if len(pts) < 3:
        return EMPTY_REGION

    lower: List[Point] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)

    upper: List[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)

    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        return EMPTY_REGION
    return Polygon(tuple(hull))


def point_in_polygon(p: Point, poly: Polygon) -> bool:
    """Half-plane test on a counter-clockwise convex polygon; boundary counts as inside"""
    if poly.is_empty:
        return False
    verts = poly.vertices
    n = len(verts)
    for i in range(n):
        if _cross(verts[i], verts[(i + 1) % n], p) < 0:
            return False
    return True


def is_convex(poly: Polygon) -> bool:
    """True when every turn has the same (counter-clockwise) sign"""
    verts = poly.vertices
    n = len(verts)
    if n < 3:
        return False
    for i in range(n):
        if _cross(verts[i], verts[(i + 1) % n], verts[(i + 2) % n]) <= 0:
            return False
    return True

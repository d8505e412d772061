"""
QuadTree spatial index for radius queries over track positions.

The tree is rebuilt every frame from current positions, so it supports
insertion and radius queries only (no deletion, no k-nearest queries).
"""

import logging
from dataclasses import dataclass, field
from typing import Hashable, Iterable, List, Optional, Set, Tuple

logger = logging.getLogger(__name__)

Point = Tuple[float, float]

DEFAULT_CAPACITY = 4
DEFAULT_MAX_DEPTH = 12


@dataclass
class QuadTree:
    """
    One node of the tree; the root owns the whole frame extent.

    Children are ordered top-left, top-right, bottom-left, bottom-right and
    split the parent at its midpoint. A point lying exactly on a split line
    goes to the lower-index child.
    """
    x: float
    y: float
    w: float
    h: float
    capacity: int = DEFAULT_CAPACITY
    max_depth: int = DEFAULT_MAX_DEPTH
    depth: int = 0
    items: List[Tuple[float, float, Hashable]] = field(default_factory=list)
    children: Optional[List["QuadTree"]] = field(default=None, repr=False)
    last_query_visits: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"QuadTree capacity must be >= 1, got {self.capacity}")
        if not (self.w > 0 and self.h > 0):
            raise ValueError("QuadTree bounds must have positive extent")

    @classmethod
    def build(cls, points: Iterable[Tuple[Point, Hashable]], width: float, height: float,
              capacity: int = DEFAULT_CAPACITY, max_depth: int = DEFAULT_MAX_DEPTH) -> "QuadTree":
        tree = cls(0.0, 0.0, float(width), float(height), capacity, max_depth)
        for point, item_id in points:
            tree.insert(point, item_id)
        return tree

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def contains(self, point: Point) -> bool:
        px, py = point
        return self.x <= px <= self.x + self.w and self.y <= py <= self.y + self.h

    def insert(self, point: Point, item_id: Hashable) -> "QuadTree":
        if not self.contains(point):
            raise ValueError(f"Point {point} outside QuadTree bounds {self.bounds}")
        self._insert(float(point[0]), float(point[1]), item_id)
        return self

    def _insert(self, px: float, py: float, item_id: Hashable) -> None:
        node = self
        while node.children is not None:
            node = node.children[node._quadrant(px, py)]
        node.items.append((px, py, item_id))
        if len(node.items) > node.capacity and node.depth < node.max_depth:
            node._split()

    def _quadrant(self, px: float, py: float) -> int:
        mx = self.x + self.w / 2.0
        my = self.y + self.h / 2.0
        return (1 if px > mx else 0) + (2 if py > my else 0)

    def _split(self) -> None:
        hw, hh = self.w / 2.0, self.h / 2.0
        d = self.depth + 1
        self.children = [
            QuadTree(self.x, self.y, hw, hh, self.capacity, self.max_depth, d),
            QuadTree(self.x + hw, self.y, hw, hh, self.capacity, self.max_depth, d),
            QuadTree(self.x, self.y + hh, hw, hh, self.capacity, self.max_depth, d),
            QuadTree(self.x + hw, self.y + hh, hw, hh, self.capacity, self.max_depth, d),
        ]
        items, self.items = self.items, []
        for px, py, item_id in items:
            self.children[self._quadrant(px, py)]._insert(px, py, item_id)

    def query_radius(self, center: Point, r: float) -> Set[Hashable]:
        """Ids whose points lie within distance r of center (boundary inclusive)"""
        if r < 0:
            raise ValueError(f"Query radius must be >= 0, got {r}")
        found: Set[Hashable] = set()
        cx, cy = float(center[0]), float(center[1])
        r2 = r * r
        visits = 0
        stack = [self]
        while stack:
            node = stack.pop()
            visits += 1
            nx = max(node.x, min(cx, node.x + node.w))
            ny = max(node.y, min(cy, node.y + node.h))
            if (nx - cx) ** 2 + (ny - cy) ** 2 > r2:
                continue
            if node.children is None:
                for px, py, item_id in node.items:
                    if (px - cx) ** 2 + (py - cy) ** 2 <= r2:
                        found.add(item_id)
            else:
                stack.extend(node.children)
        self.last_query_visits = visits
        return found

    def __len__(self) -> int:
        if self.children is None:
            return len(self.items)
        return sum(len(child) for child in self.children)

    def node_count(self) -> int:
        if self.children is None:
            return 1
        return 1 + sum(child.node_count() for child in self.children)

    def is_leaf(self) -> bool:
        return self.children is None

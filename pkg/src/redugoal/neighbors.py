"""Nearest-neighbor indexes over configurations.

The planner only needs insert + nearest. LinearIndex is the default and the
correctness reference; KDTreeIndex is a drop-in replacement for larger trees.
"""

from __future__ import annotations

import numpy as np


class LinearIndex:
    """Exact nearest neighbor by vectorized scan over a growing buffer."""

    def __init__(self, dim: int, capacity: int = 64):
        self._data = np.empty((capacity, dim))
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, q: np.ndarray) -> int:
        if self._size == len(self._data):
            grown = np.empty((2 * len(self._data), self._data.shape[1]))
            grown[: self._size] = self._data[: self._size]
            self._data = grown
        self._data[self._size] = q
        self._size += 1
        return self._size - 1

    def nearest(self, q: np.ndarray) -> tuple[int, float]:
        if self._size == 0:
            raise ValueError("index is empty")
        diff = self._data[: self._size] - q
        d2 = np.einsum("ij,ij->i", diff, diff)
        idx = int(np.argmin(d2))
        return idx, float(np.sqrt(d2[idx]))

    def config(self, idx: int) -> np.ndarray:
        return self._data[idx]

    def configs(self, ids) -> np.ndarray:
        return self._data[np.asarray(ids, dtype=int)]


class _Node:
    __slots__ = ("point", "index", "axis", "left", "right")

    def __init__(self, point, index, axis):
        self.point = point
        self.index = index
        self.axis = axis
        self.left = None
        self.right = None


class KDTreeIndex:
    """Incremental k-d tree with exact nearest queries.

    Insertion order shapes the tree (no rebalancing), which is fine for the
    randomized insertion pattern of a sampling planner.
    """

    def __init__(self, dim: int):
        self._dim = dim
        self._root: _Node | None = None
        self._points: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._points)

    def add(self, q: np.ndarray) -> int:
        q = np.asarray(q, dtype=float).copy()
        index = len(self._points)
        self._points.append(q)
        if self._root is None:
            self._root = _Node(q, index, 0)
            return index
        node = self._root
        while True:
            axis = node.axis
            side = "left" if q[axis] < node.point[axis] else "right"
            child = getattr(node, side)
            if child is None:
                setattr(node, side, _Node(q, index, (axis + 1) % self._dim))
                return index
            node = child

    def nearest(self, q: np.ndarray) -> tuple[int, float]:
        if self._root is None:
            raise ValueError("index is empty")
        q = np.asarray(q, dtype=float)
        best = [None, np.inf]  # index, squared distance

        def visit(node: _Node | None) -> None:
            if node is None:
                return
            diff = node.point - q
            d2 = float(diff @ diff)
            if d2 < best[1]:
                best[0], best[1] = node.index, d2
            delta = q[node.axis] - node.point[node.axis]
            near, far = (node.left, node.right) if delta < 0 else (node.right, node.left)
            visit(near)
            if delta * delta < best[1]:
                visit(far)

        visit(self._root)
        return best[0], float(np.sqrt(best[1]))

    def config(self, idx: int) -> np.ndarray:
        return self._points[idx]

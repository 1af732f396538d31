"""Static multi-level range tree with deletion by tombstones.

Level ``k`` is a balanced binary tree over the points sorted by coordinate
``k``; every internal node owns an associated structure on coordinate
``k + 1`` built over the points of its subtree.  The last coordinate is a
plain sorted array queried with ``searchsorted``.  Subtrees smaller than a
bucket size are scanned directly, which keeps the number of Python objects
small without changing query results.

Queries use closed boxes.  Deleted points stay in the static structure; a
count subtracts the deleted points inside the box and a report filters them
out.  Once half of the stored points are dead the tree is rebuilt from the
survivors.
"""

from __future__ import annotations

import numpy as np

__all__ = ["RangeTree"]

_BUCKET = 32


class _Sorted:
    """Last coordinate: keys sorted ascending, ids in the same order."""

    __slots__ = ("keys", "ids")

    def __init__(self, pts: np.ndarray, ids: np.ndarray, axis: int):
        order = np.argsort(pts[ids, axis], kind="stable")
        self.ids = ids[order]
        self.keys = pts[self.ids, axis]

    def _slice(self, lo: float, hi: float) -> slice:
        return slice(np.searchsorted(self.keys, lo, "left"), np.searchsorted(self.keys, hi, "right"))

    def count(self, lo, hi) -> int:
        s = self._slice(lo[-1], hi[-1])
        return max(0, s.stop - s.start)

    def report(self, lo, hi, out: list) -> None:
        s = self._slice(lo[-1], hi[-1])
        if s.stop > s.start:
            out.append(self.ids[s])


class _Node:
    """Subtree over ``ids`` sorted by coordinate ``axis``."""

    __slots__ = ("axis", "kmin", "kmax", "ids", "left", "right", "assoc")

    def __init__(self, pts: np.ndarray, ids: np.ndarray, axis: int, d: int):
        # ids arrive sorted by pts[:, axis]
        self.axis = axis
        self.ids = ids
        self.kmin = pts[ids[0], axis]
        self.kmax = pts[ids[-1], axis]
        self.left = self.right = self.assoc = None
        if len(ids) <= _BUCKET:
            return
        half = len(ids) // 2
        self.left = _Node(pts, ids[:half], axis, d)
        self.right = _Node(pts, ids[half:], axis, d)
        self.assoc = _build(pts, ids, axis + 1, d)

    def _scan(self, pts, lo, hi) -> np.ndarray:
        sub = pts[self.ids, self.axis:]
        mask = np.all((sub >= lo[self.axis:]) & (sub <= hi[self.axis:]), axis=1)
        return self.ids[mask]

    def count(self, pts, lo, hi) -> int:
        a = self.axis
        if self.kmax < lo[a] or self.kmin > hi[a]:
            return 0
        if self.assoc is None:
            return len(self._scan(pts, lo, hi))
        if lo[a] <= self.kmin and self.kmax <= hi[a]:
            return self.assoc.count(lo, hi) if isinstance(self.assoc, _Sorted) else self.assoc.count(pts, lo, hi)
        return self.left.count(pts, lo, hi) + self.right.count(pts, lo, hi)

    def report(self, pts, lo, hi, out: list) -> None:
        a = self.axis
        if self.kmax < lo[a] or self.kmin > hi[a]:
            return
        if self.assoc is None:
            found = self._scan(pts, lo, hi)
            if len(found):
                out.append(found)
            return
        if lo[a] <= self.kmin and self.kmax <= hi[a]:
            if isinstance(self.assoc, _Sorted):
                self.assoc.report(lo, hi, out)
            else:
                self.assoc.report(pts, lo, hi, out)
            return
        self.left.report(pts, lo, hi, out)
        self.right.report(pts, lo, hi, out)


def _build(pts: np.ndarray, ids: np.ndarray, axis: int, d: int):
    if axis == d - 1:
        return _Sorted(pts, ids, axis)
    order = np.argsort(pts[ids, axis], kind="stable")
    return _Node(pts, ids[order], axis, d)


class RangeTree:
    """Orthogonal range counting and reporting over id-tagged points in ``R^d``.

    >>> tree = RangeTree([[0.0, 0.0], [1.0, 2.0]])
    >>> tree.count([0, 0], [1, 2])
    2
    >>> tree.delete([0])
    >>> tree.report([0, 0], [1, 2])
    [1]
    """

    def __init__(self, points, ids=None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(len(pts), -1) if len(pts) else pts.reshape(0, 1)
        if not np.all(np.isfinite(pts)):
            raise ValueError("range tree points must be finite")
        self.d = pts.shape[1]
        self._pts = pts
        self._ids = np.arange(len(pts)) if ids is None else np.asarray(ids)
        if len(np.unique(self._ids)) != len(self._ids):
            raise ValueError("point ids must be unique")
        self._pos = {int(i): n for n, i in enumerate(self._ids)}
        self._alive = np.ones(len(pts), dtype=bool)
        self._dead_rows: list[int] = []
        self._rebuild(np.arange(len(pts)))

    def _rebuild(self, rows: np.ndarray) -> None:
        self._rows = rows
        self._dead_rows = []
        self._root = _build(self._pts, rows, 0, self.d) if len(rows) else None

    def __len__(self) -> int:
        return int(self._alive.sum())

    def _box(self, lo, hi):
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (self.d,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (self.d,))
        if np.any(lo > hi):
            raise ValueError("box must satisfy lo <= hi in every coordinate")
        return lo, hi

    def count(self, lo, hi) -> int:
        """Number of live points in the closed box ``[lo, hi]``."""
        lo, hi = self._box(lo, hi)
        if self._root is None:
            return 0
        if isinstance(self._root, _Sorted):
            total = self._root.count(lo, hi)
        else:
            total = self._root.count(self._pts, lo, hi)
        if self._dead_rows:
            dead = self._pts[self._dead_rows]
            total -= int(np.count_nonzero(np.all((dead >= lo) & (dead <= hi), axis=1)))
        return total

    def report(self, lo, hi) -> list:
        """Ids of the live points in the closed box, in ascending id order."""
        lo, hi = self._box(lo, hi)
        if self._root is None:
            return []
        out: list = []
        if isinstance(self._root, _Sorted):
            self._root.report(lo, hi, out)
        else:
            self._root.report(self._pts, lo, hi, out)
        if not out:
            return []
        rows = np.concatenate(out)
        return sorted(self._ids[r].item() for r in rows[self._alive[rows]])

    def delete(self, ids) -> None:
        """Remove points by id; raises ``KeyError`` for unknown or already deleted ids."""
        rows = []
        for i in dict.fromkeys(int(i) for i in ids):
            row = self._pos.get(i)
            if row is None or not self._alive[row]:
                raise KeyError(i)
            rows.append(row)
        for row in rows:
            self._alive[row] = False
            self._dead_rows.append(row)
        if len(self._dead_rows) * 2 >= len(self._rows) and len(self._dead_rows):
            self._rebuild(self._rows[self._alive[self._rows]])

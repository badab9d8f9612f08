"""Dominance tests, a nondominated archive and an exact hypervolume for small fronts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


def dominates(a, b) -> bool:
    """True when ``a`` is no worse than ``b`` everywhere and strictly better somewhere (minimization)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return bool(np.all(a <= b) and np.any(a < b))


def is_mutually_nondominated(points) -> bool:
    """Quadratic pairwise check."""
    pts = [np.asarray(p, dtype=float) for p in points]
    for i, p in enumerate(pts):
        for j, q in enumerate(pts):
            if i != j and dominates(p, q):
                return False
    return True


def nondominated_mask(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    keep = np.ones(len(pts), dtype=bool)
    for i in range(len(pts)):
        for j in range(len(pts)):
            if i != j and dominates(pts[j], pts[i]):
                keep[i] = False
                break
    return keep


@dataclass
class ArchiveEntry:
    index: int  # insertion order, used for tie-breaking
    genotype: np.ndarray
    objectives: np.ndarray
    payload: Any = field(default=None, repr=False)


class ParetoArchive:
    """Unbounded external archive of mutually nondominated entries.

    Candidates with non-finite objectives, candidates dominated by a member and
    exact objective duplicates of a member are rejected.
    """

    def __init__(self):
        self.entries: list[ArchiveEntry] = []
        self._counter = 0

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def insert(self, genotype, objectives, payload=None) -> bool:
        f = np.asarray(objectives, dtype=float)
        if not np.all(np.isfinite(f)):
            return False
        for e in self.entries:
            if dominates(e.objectives, f) or np.array_equal(e.objectives, f):
                return False
        self.entries = [e for e in self.entries if not dominates(f, e.objectives)]
        self.entries.append(ArchiveEntry(self._counter, np.array(genotype, dtype=float), f, payload))
        self._counter += 1
        return True

    def objectives(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 0))
        return np.array([e.objectives for e in self.entries])

    def best_per_objective(self) -> np.ndarray:
        return self.objectives().min(axis=0)


def hypervolume(points, ref) -> float:
    """Exact dominated hypervolume (minimization) by recursive slicing.

    Points not strictly better than ``ref`` in every coordinate contribute
    nothing.  Cost grows as n**(m-1); meant for archives of a few hundred
    points in two or three objectives.
    """
    ref = np.asarray(ref, dtype=float)
    pts = np.asarray(points, dtype=float).reshape(-1, ref.size)
    pts = pts[np.all(pts < ref, axis=1)]
    if len(pts) == 0:
        return 0.0
    return _hv(pts[nondominated_mask(pts)] if len(pts) < 400 else pts, ref)


def _hv(pts: np.ndarray, ref: np.ndarray) -> float:
    m = ref.size
    if m == 1:
        return float(ref[0] - pts[:, 0].min())
    if m == 2:
        order = np.argsort(pts[:, 0], kind="stable")
        total, best_y = 0.0, ref[1]
        for x, y in pts[order]:
            if y < best_y:
                total += (ref[0] - x) * (best_y - y)
                best_y = y
        return float(total)
    order = np.argsort(pts[:, -1], kind="stable")
    pts = pts[order]
    total = 0.0
    for i in range(len(pts)):
        upper = pts[i + 1, -1] if i + 1 < len(pts) else ref[-1]
        depth = upper - pts[i, -1]
        if depth > 0:
            total += depth * _hv(pts[: i + 1, :-1], ref[:-1])
    return float(total)

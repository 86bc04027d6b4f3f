"""Dominance relation and Pareto-set extraction over violation vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def dominates(a, b) -> bool:
    """True iff a >= b componentwise with strict inequality somewhere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("violation vectors have mismatched lengths")
    return bool(np.all(a >= b) and np.any(a > b))


def pareto_set(points) -> list[int]:
    """Indices of non-dominated points; duplicates of front members retained.

    Points are pre-sorted by descending coordinate sum, so a point can only be
    dominated by one appearing earlier; each point is checked against the
    running front only.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a non-empty 2-D collection")
    order = np.argsort(-pts.sum(axis=1), kind="stable")
    front: list[int] = []
    for i in order:
        p = pts[i]
        dominated = False
        for j in front:
            f = pts[j]
            if np.all(f >= p) and np.any(f > p):
                dominated = True
                break
        if not dominated:
            front.append(int(i))
    return sorted(front)


def is_critical(point, points) -> bool:
    """Non-dominated within ``points`` and has at least one positive entry."""
    point = np.asarray(point, dtype=float)
    if not np.any(point > 0):
        return False
    for other in np.asarray(points, dtype=float):
        if dominates(other, point):
            return False
    return True


@dataclass
class ParetoArchive:
    """Mutable archive of non-dominated, positively-violating members.

    Members with identical violation vectors are all retained. Scenarios with
    no positive violation entry are never admitted.
    """

    objective_ids: tuple[int, ...]
    members: list[tuple[int, np.ndarray]] = field(default_factory=list)

    def add(self, scenario_id: int, violations) -> bool:
        v = np.asarray(violations, dtype=float)
        if len(v) != len(self.objective_ids):
            raise ValueError("violation vector length does not match objectives")
        if not np.any(v > 0):
            return False
        if any(dominates(mv, v) for _, mv in self.members):
            return False
        self.members = [
            (sid, mv) for sid, mv in self.members if not dominates(v, mv)
        ]
        self.members.append((scenario_id, v))
        return True

    @property
    def scenario_ids(self) -> list[int]:
        return sorted(sid for sid, _ in self.members)

    def __len__(self) -> int:
        return len(self.members)

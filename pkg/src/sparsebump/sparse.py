"""Sparse families of dyadic cubes.

A family is sparse when, for every member ``P``, the members strictly inside
``P`` cover at most half of it.  The sparseness parameter is fixed at 1/2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .lattice import ROOT, Cube, LevelOutOfRange, max_depth

SPARSENESS = 0.5
PROFILES = ("random", "cascade", "binary")


class SparsenessError(ValueError):
    """The family violates the 1/2-sparseness condition."""


@dataclass(frozen=True)
class SparseReport:
    ok: bool
    worst_P: Cube | None
    worst_fraction: float


class SparseFamily:
    """An immutable set of cubes inside a lattice of the given depth.

    Members are kept sorted by (level, index).  ``tree_children[Q]`` lists the
    maximal members strictly inside ``Q``; they are pairwise disjoint.
    """

    def __init__(self, cubes: Iterable[Cube], depth: int):
        self.depth = int(depth)
        members = sorted(set(cubes))
        for q in members:
            if q.level > self.depth:
                raise LevelOutOfRange(f"cube {q} is deeper than {self.depth}")
        self.cubes: tuple[Cube, ...] = tuple(members)
        self._set = frozenset(members)

    def __contains__(self, cube: Cube) -> bool:
        return cube in self._set

    def __iter__(self):
        return iter(self.cubes)

    def __len__(self) -> int:
        return len(self.cubes)

    def __eq__(self, other) -> bool:
        return isinstance(other, SparseFamily) and self.depth == other.depth and self.cubes == other.cubes

    def __hash__(self):
        return hash((self.depth, self.cubes))

    def __repr__(self) -> str:
        return f"SparseFamily(depth={self.depth}, size={len(self)})"

    @cached_property
    def tree_parent(self) -> dict[Cube, Cube | None]:
        """Nearest strict ancestor inside the family (None for tops)."""
        out = {}
        for q in self.cubes:
            out[q] = next((a for a in q.ancestors() if a in self._set), None)
        return out

    @cached_property
    def tree_children(self) -> dict[Cube, list[Cube]]:
        out: dict[Cube, list[Cube]] = {q: [] for q in self.cubes}
        for q, a in self.tree_parent.items():
            if a is not None:
                out[a].append(q)
        return out

    @cached_property
    def tops(self) -> list[Cube]:
        return [q for q, a in self.tree_parent.items() if a is None]

    @cached_property
    def level_masks(self) -> list[np.ndarray]:
        """``level_masks[l][k]`` is True iff Cube(l, k) is a member."""
        masks = [np.zeros(1 << lv, dtype=bool) for lv in range(self.depth + 1)]
        for q in self.cubes:
            masks[q.level][q.index] = True
        return masks

    def inside(self, P: Cube, strict: bool = False) -> list[Cube]:
        """Members contained in ``P`` (``Q ⊆ P``, or ``Q ⊊ P`` when strict)."""
        return [q for q in self.cubes if P.contains(q, strict=strict)]

    def restricted(self, cubes: Iterable[Cube]) -> "SparseFamily":
        return SparseFamily(cubes, self.depth)

    def with_toggled(self, cube: Cube) -> "SparseFamily":
        cubes = set(self.cubes)
        cubes.symmetric_difference_update({cube})
        return SparseFamily(cubes, self.depth)

    def to_list(self) -> list[dict]:
        return [q.to_dict() for q in self.cubes]


def covered_mask(family: SparseFamily, P: Cube) -> np.ndarray:
    """Cells of ``P`` (finest level) covered by members strictly inside ``P``."""
    sl = P.cells(family.depth)
    mask = np.zeros(sl.stop - sl.start, dtype=bool)
    # the maximal strict members are disjoint and cover the same union
    for q in _maximal_inside(family, P):
        qs = q.cells(family.depth)
        mask[qs.start - sl.start:qs.stop - sl.start] = True
    return mask


def _maximal_inside(family: SparseFamily, P: Cube) -> list[Cube]:
    if P in family:
        return family.tree_children[P]
    return [q for q in family.inside(P, strict=True)
            if not any(P.contains(a, strict=True) for a in q.ancestors() if a in family)]


def verify_sparse(family: SparseFamily) -> SparseReport:
    """Worst covered fraction over members; ``ok`` iff it is at most 1/2.

    Fractions are cell counts over a power of two, so they are exact.
    """
    worst, worst_P = 0.0, None
    for P in family.cubes:
        mask = covered_mask(family, P)
        frac = np.count_nonzero(mask) / mask.size
        if worst_P is None or frac > worst:
            worst, worst_P = frac, P
    return SparseReport(ok=worst <= SPARSENESS, worst_P=worst_P, worst_fraction=worst)


def carleson_sum(family: SparseFamily, P: Cube, strict: bool = False) -> float:
    """Sum of ``|Q|`` over members ``Q ⊆ P`` (``Q ⊊ P`` with ``strict=True``)."""
    return float(sum(q.length for q in family.inside(P, strict=strict)))


def carleson_sums(family: SparseFamily) -> dict[Cube, float]:
    """``carleson_sum(family, P)`` for every member, by one bottom-up pass."""
    out: dict[Cube, float] = {}
    for q in reversed(family.cubes):
        out[q] = q.length + sum(out[c] for c in family.tree_children[q])
    return out


def exceptional_sets(family: SparseFamily) -> dict[Cube, np.ndarray]:
    """Cell masks (full lattice length) of ``E_Q = Q minus the members strictly inside Q``.

    Only the maximal strict members are removed; the rest lie inside those.
    """
    report = verify_sparse(family)
    if not report.ok:
        raise SparsenessError(
            f"family is not sparse: fraction {report.worst_fraction} at {report.worst_P}")
    n = 1 << family.depth
    out = {}
    for q in family.cubes:
        mask = np.zeros(n, dtype=bool)
        mask[q.cells(family.depth)] = True
        for c in family.tree_children[q]:
            mask[c.cells(family.depth)] = False
        out[q] = mask
    return out


def _random_antichain(rng: np.random.Generator, Q: Cube, depth: int, attempts: int) -> list[Cube]:
    """Disjoint strict descendants of ``Q`` with total length at most |Q|/2."""
    budget = SPARSENESS * Q.length
    chosen: list[Cube] = []
    used = 0.0
    for _ in range(attempts):
        level = int(rng.integers(Q.level + 1, depth + 1))
        offset = int(rng.integers(0, 1 << (level - Q.level)))
        cand = Cube(level, (Q.index << (level - Q.level)) + offset)
        if used + cand.length > budget:
            continue
        if any(c.contains(cand) or cand.contains(c) for c in chosen):
            continue
        chosen.append(cand)
        used += cand.length
    return chosen


def generate_sparse(depth: int, seed: int = 0, profile: str = "random",
                    attempts: int = 6) -> SparseFamily:
    """Random sparse family containing the root.

    ``random``: each selected cube picks a random antichain of descendants
    covering at most half of it, then recurses into them.  ``cascade``: the
    chain [0,1) ⊃ [0,1/2) ⊃ ... down to the finest level.  ``binary``: each
    cube selects the left grandchild inside each of its children (covers
    exactly half), giving the densest packing.
    """
    if not 0 <= depth <= max_depth():
        raise LevelOutOfRange(f"depth must lie in [0, {max_depth()}]")
    if profile == "cascade":
        family = SparseFamily((Cube(lv, 0) for lv in range(depth + 1)), depth)
    elif profile in ("random", "binary"):
        rng = np.random.default_rng(seed)
        cubes = [ROOT]
        stack = [ROOT]
        while stack:
            Q = stack.pop()
            if Q.level >= depth:
                continue
            if profile == "binary":
                if Q.level + 2 <= depth:
                    kids = [c.children()[0] for c in Q.children()]
                else:
                    kids = [Q.children()[0]]
            else:
                kids = _random_antichain(rng, Q, depth, attempts)
            cubes.extend(kids)
            stack.extend(kids)
        family = SparseFamily(cubes, depth)
    else:
        raise ValueError(f"unknown branching profile {profile!r}; expected one of {PROFILES}")
    report = verify_sparse(family)
    assert report.ok, f"generator produced a non-sparse family ({report})"
    return family


def save_family(family: SparseFamily, path) -> None:
    Path(path).write_text(json.dumps(family.to_list(), indent=1) + "\n")


def family_from_list(items: list[dict], depth: int) -> SparseFamily:
    family = SparseFamily((Cube(int(d["level"]), int(d["index"])) for d in items), depth)
    report = verify_sparse(family)
    if not report.ok:
        raise SparsenessError(
            f"loaded family is not sparse: fraction {report.worst_fraction} at {report.worst_P}")
    return family


def load_family(path, depth: int) -> SparseFamily:
    """Read a family file (list of ``{"level", "index"}``) and re-verify sparseness."""
    return family_from_list(json.loads(Path(path).read_text()), depth)

"""Maximal function, entropy functional, bump constants and testing constants.

All suprema over "cubes" run over every dyadic cube of the model, levels
``0..depth``.  Tables are ordered by (level, index).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.special import zeta

from .lattice import Cube, WeightedModel, all_cubes, as_cell_function, pyramid
from .sparse import SparseFamily

DEFAULT_DELTA = 0.2
DIRECTIONS = ("w_sigma", "sigma_w")


class ConfigurationError(ValueError):
    """Inconsistent parameters, e.g. a bump built for a different exponent."""


def dual_exponent(p: float) -> float:
    if p <= 1:
        raise ConfigurationError(f"exponent must exceed 1, got {p}")
    return p / (p - 1.0)


def _roles(direction: str) -> tuple[str, str]:
    """(outer, inner) weights: [w, sigma] is ("w", "sigma")."""
    if direction == "w_sigma":
        return "w", "sigma"
    if direction == "sigma_w":
        return "sigma", "w"
    raise ConfigurationError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


@dataclass(frozen=True)
class BumpFunction:
    """Logarithmic bump ``(1 + log2 t)^(p(1+delta))``.

    ``entropy_eps`` is defined on ``[1, inf)``; ``direct_alpha`` uses
    ``|log2 t|`` and is defined on ``(0, inf)``.
    """

    kind: str
    p: float
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if self.kind not in ("entropy_eps", "direct_alpha"):
            raise ConfigurationError(f"unknown bump kind {self.kind!r}")
        if self.p <= 1 or self.delta <= 0:
            raise ConfigurationError("bump needs p > 1 and delta > 0")

    @property
    def power(self) -> float:
        return self.p * (1.0 + self.delta)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "entropy_eps":
            if np.any(t < 1):
                raise ConfigurationError("entropy bump is only defined on [1, inf)")
            base = 1.0 + np.log2(t)
        else:
            base = 1.0 + np.abs(np.log2(t))
        return base ** self.power

    def summability(self, terms: int = 1000) -> "SummabilityCertificate":
        """Partial sums of ``bump(2^r)^(-1/p)`` against the closed-form limit.

        At dyadic points the series is ``sum (1+|r|)^-(1+delta)``, i.e.
        ``zeta(1+delta)`` over ``r >= 0`` and ``2*zeta(1+delta) - 1`` over all
        integers.
        """
        r = np.arange(terms + 1, dtype=float)
        # bump(2^r) = (1 + |r|)^power, evaluated without forming 2^r
        pos = (1.0 + r) ** (-self.power / self.p)
        if self.kind == "entropy_eps":
            terms_ = pos
            limit = float(zeta(1.0 + self.delta))
        else:
            neg = pos[1:]
            terms_ = np.concatenate([pos, neg])
            limit = float(2.0 * zeta(1.0 + self.delta) - 1.0)
        return SummabilityCertificate(
            terms=terms,
            partial_sum=float(np.sum(terms_)),
            limit=limit,
            last_increment=float(pos[-1] if self.kind == "entropy_eps" else pos[-1] + neg[-1]),
        )


@dataclass(frozen=True)
class SummabilityCertificate:
    terms: int
    partial_sum: float
    limit: float
    last_increment: float


def entropy_bump(p: float, delta: float = DEFAULT_DELTA) -> BumpFunction:
    return BumpFunction("entropy_eps", p, delta)


def direct_bump(p: float, delta: float = DEFAULT_DELTA) -> BumpFunction:
    return BumpFunction("direct_alpha", p, delta)


@dataclass
class ConstantReport:
    value: float
    witness: Cube
    table: list[tuple[Cube, float]] | None = field(default=None, repr=False)

    def to_dict(self, with_table: bool = False) -> dict:
        out = {"value": self.value, "witness": self.witness.to_dict()}
        if with_table and self.table is not None:
            out["table"] = [{"level": q.level, "index": q.index, "value": v} for q, v in self.table]
        return out

    def to_json(self, with_table: bool = False) -> str:
        return json.dumps(self.to_dict(with_table))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["level", "index", "value"])
            for q, v in self.table or []:
                writer.writerow([q.level, q.index, repr(v)])


def _sup(cubes: list[Cube], values: np.ndarray, with_table: bool) -> ConstantReport:
    k = int(np.argmax(values))  # first maximum, so ties go to the (level, index)-smallest cube
    table = list(zip(cubes, values.tolist())) if with_table else None
    return ConstantReport(float(values[k]), cubes[k], table)


# ---------------------------------------------------------------------------
# maximal function and entropy
# ---------------------------------------------------------------------------

def dyadic_maximal(model: WeightedModel, g) -> np.ndarray:
    """Dyadic maximal function of ``g``: max of ``<|g|>_Q`` over cubes containing each cell."""
    g = as_cell_function(g, model.depth)
    sums = pyramid(np.abs(g) * model.cell_length)
    run = sums[0] * 1.0
    for lv in range(1, model.depth + 1):
        run = np.maximum(np.repeat(run, 2), sums[lv] * float(1 << lv))
    return run


def _rho_level(model: WeightedModel, which: str, level: int) -> np.ndarray:
    """Entropy functional for every cube at ``level``.

    Ancestors of ``Q`` never beat ``Q`` itself for ``M(1_Q mu)`` on ``Q``, so
    the running maximum starts at ``Q``.  The integral is accumulated as
    ``mu(Q) + integral of (M - density)``; every summand of the correction is
    nonnegative, so the result is never below 1.
    """
    avgs = model.averages(which)
    blocks = 1 << level
    run = avgs[level].reshape(blocks, 1)
    for m in range(level + 1, model.depth + 1):
        run = np.maximum(np.repeat(run, 2, axis=1), avgs[m].reshape(blocks, -1))
    dens = model.density(which).reshape(blocks, -1)
    excess = np.sum(run - dens, axis=1) * model.cell_length
    mass = model.masses(which)[level]
    return 1.0 + excess / mass


def rho_table(model: WeightedModel, which: str = "sigma") -> list[np.ndarray]:
    """Per-level arrays of the entropy functional of ``which`` for every cube."""
    return [_rho_level(model, which, lv) for lv in range(model.depth + 1)]


def entropy_rho(model: WeightedModel, cube: Cube, which: str = "sigma") -> float:
    """``mu(Q)^-1 * integral over Q of M(1_Q mu)``; always at least 1."""
    model._check_cube(cube)
    return float(_rho_level(model, which, cube.level)[cube.index])


# ---------------------------------------------------------------------------
# joint constants
# ---------------------------------------------------------------------------

def _ap_products(model: WeightedModel, p: float, direction: str) -> list[np.ndarray]:
    outer, inner = _roles(direction)
    ao, ai = model.averages(outer), model.averages(inner)
    return [ao[lv] * ai[lv] ** (p - 1.0) for lv in range(model.depth + 1)]


def _flatten(levels: list[np.ndarray]) -> np.ndarray:
    return np.concatenate(levels)


def ap_constant(model: WeightedModel, p: float, direction: str = "w_sigma",
                with_table: bool = False) -> ConstantReport:
    """Plain joint characteristic ``sup <outer>_Q <inner>_Q^(p-1)`` over all cubes."""
    dual_exponent(p)
    return _sup(all_cubes(model.depth), _flatten(_ap_products(model, p, direction)), with_table)


def entropy_bump_constant(model: WeightedModel, p: float, eps: BumpFunction,
                          direction: str = "w_sigma", with_table: bool = False) -> ConstantReport:
    """``sup_Q <outer>_Q <inner>_Q^(p-1) rho_inner(Q) eps(rho_inner(Q))``.

    For the dual constant pass the dual exponent and a bump built for it
    together with ``direction="sigma_w"``.
    """
    if eps.kind != "entropy_eps":
        raise ConfigurationError("entropy bump constant needs an entropy_eps bump")
    if not math.isclose(eps.p, p, rel_tol=0, abs_tol=1e-12):
        raise ConfigurationError(f"bump exponent {eps.p} does not match p={p}")
    _, inner = _roles(direction)
    rho = _flatten(rho_table(model, inner))
    vals = _flatten(_ap_products(model, p, direction)) * rho * eps(rho)
    return _sup(all_cubes(model.depth), vals, with_table)


def direct_bump_constant(model: WeightedModel, p: float, alpha: BumpFunction,
                         direction: str = "w_sigma", with_table: bool = False) -> ConstantReport:
    """``sup_Q <outer>_Q <inner>_Q^(p-1) alpha(<inner>_Q)``."""
    if alpha.kind != "direct_alpha":
        raise ConfigurationError("direct bump constant needs a direct_alpha bump")
    if not math.isclose(alpha.p, p, rel_tol=0, abs_tol=1e-12):
        raise ConfigurationError(f"bump exponent {alpha.p} does not match p={p}")
    _, inner = _roles(direction)
    inner_avg = _flatten(model.averages(inner))
    vals = _flatten(_ap_products(model, p, direction)) * alpha(inner_avg)
    return _sup(all_cubes(model.depth), vals, with_table)


def restricted_ap(model: WeightedModel, p: float, collection: Iterable[Cube],
                  direction: str = "w_sigma") -> float:
    """Joint characteristic restricted to ``collection``."""
    cubes = list(collection)
    if not cubes:
        raise ValueError("restricted characteristic needs a nonempty collection")
    outer, inner = _roles(direction)
    return max(model.average(outer, q) * model.average(inner, q) ** (p - 1.0) for q in cubes)


# ---------------------------------------------------------------------------
# testing constants
# ---------------------------------------------------------------------------

def stack_functions(model: WeightedModel, family: SparseFamily, which: str = "sigma") -> dict[Cube, np.ndarray]:
    """For each member ``P``: cell values on ``P`` of ``sum_{Q in family, Q ⊆ P} <mu>_Q 1_Q``.

    Built bottom-up over the family tree, so each value is the sum of the
    chain of averages above the cell (within ``P``) in a fixed order.
    """
    avgs = model.averages(which)
    out: dict[Cube, np.ndarray] = {}
    for P in reversed(family.cubes):
        sl = P.cells(model.depth)
        vals = np.full(sl.stop - sl.start, avgs[P.level][P.index])
        for c in family.tree_children[P]:
            cs = c.cells(model.depth)
            vals[cs.start - sl.start:cs.stop - sl.start] += out[c]
        out[P] = vals
    return out


def collection_stack(model: WeightedModel, cubes: Iterable[Cube], P: Cube,
                     which: str = "sigma") -> np.ndarray:
    """Cell values on ``P`` of ``sum_{Q in cubes, Q ⊆ P} <mu>_Q 1_Q`` for any collection."""
    sl = P.cells(model.depth)
    vals = np.zeros(sl.stop - sl.start)
    for q in sorted(cubes):
        if P.contains(q):
            qs = q.cells(model.depth)
            vals[qs.start - sl.start:qs.stop - sl.start] += model.average(which, q)
    return vals


def testing_constant(model: WeightedModel, family: SparseFamily, p: float,
                     direction: str = "w_sigma", with_table: bool = False) -> ConstantReport:
    """``sup_P inner(P)^-1 * integral over P of (stack_inner)^p * outer``."""
    outer, inner = _roles(direction)
    if len(family) == 0:
        raise ValueError("testing constants need a nonempty family")
    stacks = stack_functions(model, family, inner)
    h = model.cell_length
    dens = model.density(outer)
    cubes = list(family.cubes)
    vals = np.empty(len(cubes))
    for i, P in enumerate(cubes):
        sl = P.cells(model.depth)
        vals[i] = np.sum(stacks[P] ** p * dens[sl]) * h / model.measure(inner, P)
    return _sup(cubes, vals, with_table)


def testing_constants(model: WeightedModel, family: SparseFamily, p: float,
                      with_table: bool = False) -> tuple[ConstantReport, ConstantReport]:
    """(T1, T2): T1 tests with ``sigma`` at exponent ``p``, T2 with ``w`` at ``p'``."""
    q = dual_exponent(p)
    return (testing_constant(model, family, p, "w_sigma", with_table),
            testing_constant(model, family, q, "sigma_w", with_table))

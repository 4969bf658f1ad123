"""Finite dyadic model of [0, 1).

A model of depth ``L`` has ``2**L`` finest cells of length ``2**-L``.  Weights
are stored as per-cell densities, so every integral is an exact finite sum.
Cube measures are read off a pyramid of pairwise sums, which makes
``mu(Q) == mu(left) + mu(right)`` hold bit-for-bit.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

DEFAULT_MAX_DEPTH = 20
WEIGHTS = ("w", "sigma")


class LevelOutOfRange(ValueError):
    """A cube or function does not fit the model's depth."""


def max_depth() -> int:
    """Configured depth cap (``SPARSEBUMP_MAX_DEPTH`` overrides the default)."""
    raw = os.environ.get("SPARSEBUMP_MAX_DEPTH")
    return int(raw) if raw else DEFAULT_MAX_DEPTH


@dataclass(frozen=True, order=True)
class Cube:
    """Dyadic interval ``[index * 2**-level, (index + 1) * 2**-level)``."""

    level: int
    index: int

    def __post_init__(self):
        if self.level < 0 or not 0 <= self.index < (1 << self.level):
            raise LevelOutOfRange(f"invalid dyadic cube {self.level, self.index}")

    @property
    def length(self) -> float:
        return 2.0 ** -self.level

    @property
    def left(self) -> float:
        return self.index * self.length

    def children(self) -> tuple["Cube", "Cube"]:
        return Cube(self.level + 1, 2 * self.index), Cube(self.level + 1, 2 * self.index + 1)

    def parent(self) -> "Cube | None":
        if self.level == 0:
            return None
        return Cube(self.level - 1, self.index >> 1)

    def ancestors(self) -> Iterator["Cube"]:
        """Strict ancestors, nearest first."""
        q = self.parent()
        while q is not None:
            yield q
            q = q.parent()

    def contains(self, other: "Cube", strict: bool = False) -> bool:
        if other.level < self.level or (strict and other.level == self.level):
            return False
        return other.index >> (other.level - self.level) == self.index

    def descendants_at(self, level: int) -> list["Cube"]:
        if level < self.level:
            raise LevelOutOfRange(f"level {level} is above cube level {self.level}")
        shift = level - self.level
        start = self.index << shift
        return [Cube(level, k) for k in range(start, start + (1 << shift))]

    def cells(self, depth: int) -> slice:
        """Slice of finest-level cell indices covered by this cube."""
        if self.level > depth:
            raise LevelOutOfRange(f"cube level {self.level} exceeds depth {depth}")
        shift = depth - self.level
        return slice(self.index << shift, (self.index + 1) << shift)

    def to_dict(self) -> dict:
        return {"level": self.level, "index": self.index}

    def __str__(self) -> str:
        return f"[{self.index}/2^{self.level}, {self.index + 1}/2^{self.level})"


ROOT = Cube(0, 0)


def all_cubes(depth: int) -> list[Cube]:
    """Every cube of the lattice, ordered by (level, index)."""
    return [Cube(lv, k) for lv in range(depth + 1) for k in range(1 << lv)]


def pyramid(cell_masses: np.ndarray) -> list[np.ndarray]:
    """Per-level cube sums of ``cell_masses``; ``pyr[l][k]`` is the mass of Cube(l, k).

    Each level is the pairwise sum of the level below, so the whole pyramid
    is a pairwise summation tree.
    """
    levels = [np.asarray(cell_masses, dtype=float)]
    while levels[-1].size > 1:
        fine = levels[-1]
        levels.append(fine[0::2] + fine[1::2])
    return levels[::-1]


def as_cell_function(values, depth: int) -> np.ndarray:
    """Validate a cell-value vector (length ``2**depth``) and return it as floats."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size != 1 << depth:
        raise LevelOutOfRange(f"cell function must have length {1 << depth}, got {arr.shape}")
    return arr


class WeightedModel:
    """Lattice depth plus strictly positive cell densities for ``w`` and ``sigma``.

    Immutable: the density arrays are copied and flagged read-only.
    """

    def __init__(self, depth: int, w: Sequence[float], sigma: Sequence[float]):
        depth = int(depth)
        if not 1 <= depth <= max_depth():
            raise LevelOutOfRange(f"depth must lie in [1, {max_depth()}], got {depth}")
        self.depth = depth
        self.w = self._check(w, "w")
        self.sigma = self._check(sigma, "sigma")

    def _check(self, values, name: str) -> np.ndarray:
        arr = np.array(values, dtype=float)
        if arr.shape != (self.n_cells,):
            raise ValueError(f"{name} needs {self.n_cells} densities, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError(f"{name} densities must be finite and strictly positive")
        arr.flags.writeable = False
        return arr

    @property
    def n_cells(self) -> int:
        return 1 << self.depth

    @property
    def cell_length(self) -> float:
        return 2.0 ** -self.depth

    def density(self, which: str) -> np.ndarray:
        if which == "w":
            return self.w
        if which == "sigma":
            return self.sigma
        raise ValueError(f"unknown weight {which!r}")

    @cached_property
    def _pyramids(self) -> dict[str, list[np.ndarray]]:
        h = self.cell_length
        return {name: pyramid(self.density(name) * h) for name in WEIGHTS}

    def masses(self, which: str) -> list[np.ndarray]:
        """Per-level pyramid of cube masses for ``w`` or ``sigma``."""
        return self._pyramids[which]

    def averages(self, which: str) -> list[np.ndarray]:
        """Per-level pyramid of cube averages (mass times ``2**level``, exact)."""
        return [m * float(1 << lv) for lv, m in enumerate(self._pyramids[which])]

    def _check_cube(self, cube: Cube) -> None:
        if cube.level > self.depth:
            raise LevelOutOfRange(f"cube level {cube.level} exceeds model depth {self.depth}")

    def measure(self, which: str, cube: Cube) -> float:
        self._check_cube(cube)
        if which == "lebesgue":
            return cube.length
        return float(self._pyramids[which][cube.level][cube.index])

    def average(self, which: str, cube: Cube) -> float:
        return self.measure(which, cube) * float(1 << cube.level)

    def weighted_average(self, f, cube: Cube, which: str = "sigma") -> float:
        """``|Q|^-1 * integral over Q of f * which``."""
        self._check_cube(cube)
        f = as_cell_function(f, self.depth)
        sl = cube.cells(self.depth)
        total = float(np.sum(f[sl] * self.density(which)[sl])) * self.cell_length
        return total * float(1 << cube.level)

    def swapped(self) -> "WeightedModel":
        """Same lattice with the roles of ``w`` and ``sigma`` exchanged."""
        return WeightedModel(self.depth, self.sigma, self.w)

    def scaled(self, w_factor: float = 1.0, sigma_factor: float = 1.0) -> "WeightedModel":
        return WeightedModel(self.depth, self.w * w_factor, self.sigma * sigma_factor)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, WeightedModel)
            and self.depth == other.depth
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.sigma, other.sigma)
        )

    def __hash__(self):
        return hash((self.depth, self.w.tobytes(), self.sigma.tobytes()))

    def __repr__(self) -> str:
        return f"WeightedModel(depth={self.depth})"

    @classmethod
    def constant(cls, depth: int, w: float = 1.0, sigma: float = 1.0) -> "WeightedModel":
        n = 1 << depth
        return cls(depth, np.full(n, float(w)), np.full(n, float(sigma)))

    def to_dict(self) -> dict:
        return {"depth": self.depth, "w": self.w.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "WeightedModel":
        try:
            return cls(data["depth"], data["w"], data["sigma"])
        except KeyError as exc:
            raise ValueError(f"model file is missing key {exc}") from None


def save_model(model: WeightedModel, path, extra: dict | None = None) -> None:
    payload = model.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_model(path) -> WeightedModel:
    return WeightedModel.from_dict(json.loads(Path(path).read_text()))


WEIGHT_LAWS = ("lognormal", "dyadic-doubling", "spike")


def random_density(depth: int, rng: np.random.Generator, law: str = "lognormal",
                   spread: float = 1.0, spike_power: int | None = None) -> np.ndarray:
    """One strictly positive density vector of length ``2**depth``.

    ``lognormal``: iid ``exp(spread * N(0, 1))`` cells.  ``dyadic-doubling``:
    a multiplicative cascade where each cube splits its mass between its
    children in ratio ``(1 + t) : (1 - t)``, ``t`` uniform in ``(-0.9, 0.9)``.
    ``spike``: density 1 except one random cell carrying ``2**spike_power``
    (default: the depth).
    """
    n = 1 << depth
    if law == "lognormal":
        return np.exp(spread * rng.standard_normal(n))
    if law == "dyadic-doubling":
        dens = np.ones(1)
        for _ in range(depth):
            t = rng.uniform(-0.9, 0.9, dens.size)
            dens = np.column_stack([dens * (1 + t), dens * (1 - t)]).ravel()
        return dens
    if law == "spike":
        k = depth if spike_power is None else spike_power
        dens = np.ones(n)
        dens[int(rng.integers(n))] = 2.0 ** k
        return dens
    raise ValueError(f"unknown weight law {law!r}; expected one of {WEIGHT_LAWS}")


def random_model(depth: int, seed: int, law: str = "lognormal", **kwargs) -> WeightedModel:
    """Model with independent ``w`` and ``sigma`` drawn from ``law``."""
    rng = np.random.default_rng(seed)
    w = random_density(depth, rng, law, **kwargs)
    sigma = random_density(depth, rng, law, **kwargs)
    return WeightedModel(depth, w, sigma)

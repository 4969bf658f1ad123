"""Ensemble runs over a grid of (depth, p, delta, seed).

Every seeded instance is a reproducible (model, family) pair.  Work is fanned
out per (depth, seed) since norms and proof diagnostics do not depend on
delta; rows come back sorted by (depth, seed, p, delta, inequality).
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from . import theorems
from .lattice import WEIGHT_LAWS, WeightedModel, random_model
from .sparse import SparseFamily, generate_sparse

DEFAULT_DEPTHS = (4, 6, 8)
DEFAULT_PS = (1.5, 2.0, 3.0)
DEFAULT_DELTAS = (0.1, 0.2, 0.5)
DEFAULT_SEEDS = 50
CALIBRATED = ("sawyer", "theorem1", "theorem2")
CALIBRATION_DELTA = 0.2
CALIBRATION_RTOL = 1e-6
COLUMNS = ("seed", "depth", "p", "delta", "inequality", "lhs", "rhs", "ratio", "passed")


def ensemble_instance(depth: int, seed: int) -> tuple[WeightedModel, SparseFamily]:
    """Seeded (model, family); the weight law cycles with the seed."""
    law = WEIGHT_LAWS[seed % len(WEIGHT_LAWS)]
    return random_model(depth, seed, law), generate_sparse(depth, seed)


@dataclass
class SweepGrid:
    depths: tuple[int, ...] = DEFAULT_DEPTHS
    ps: tuple[float, ...] = DEFAULT_PS
    deltas: tuple[float, ...] = DEFAULT_DELTAS
    seeds: int = DEFAULT_SEEDS
    norm_method: str = "auto"
    diagnostics: bool = True

    def tasks(self):
        return [(d, s) for d, s in itertools.product(self.depths, range(self.seeds))]


@dataclass
class SweepRow:
    seed: int
    depth: int
    p: float
    delta: float | None
    inequality: str
    lhs: float
    rhs: float
    ratio: float
    passed: bool

    def key(self):
        return (self.depth, self.seed, self.p, -1.0 if self.delta is None else self.delta, self.inequality)


def _row(seed, depth, p, delta, rep: theorems.VerificationReport) -> SweepRow:
    return SweepRow(seed, depth, p, delta, rep.name, rep.lhs, rep.rhs, rep.ratio, rep.passed)


def _worst(reports: list[theorems.VerificationReport]) -> theorems.VerificationReport:
    """Largest-ratio report; ``passed`` is the conjunction over all of them."""
    worst = max(reports, key=lambda r: r.ratio)
    return theorems.VerificationReport(worst.name, worst.lhs, worst.rhs, worst.params, worst.witness,
                                       worst.bound, all(r.passed for r in reports))


def run_instance(task: tuple[int, int], grid: SweepGrid) -> list[SweepRow]:
    depth, seed = task
    model, family = ensemble_instance(depth, seed)
    rows = []
    for p in grid.ps:
        T1, T2, primal, dual = theorems.testing_and_norms(model, family, p, grid.norm_method, None)
        saw = theorems.verify_sawyer(model, family, p, primal=primal, dual=dual)
        rows.append(_row(seed, depth, p, None, saw))
        q = p / (p - 1)
        rows.append(SweepRow(seed, depth, p, None, "reverse_T1", T1.value ** (1 / p), primal.value,
                             T1.value ** (1 / p) / primal.value, saw.extra["reverse_T1_ok"]))
        rows.append(SweepRow(seed, depth, p, None, "reverse_T2", T2.value ** (1 / q), dual.value,
                             T2.value ** (1 / q) / dual.value, saw.extra["reverse_T2_ok"]))
        gap = saw.extra["dual_gap"]
        rows.append(SweepRow(seed, depth, p, None, "duality", primal.value, dual.value,
                             primal.value / dual.value, gap < theorems.DUALITY_RTOL))
        rows.append(_row(seed, depth, p, None, theorems.verify_plain_ap(model, family, p, primal=primal)))
        for delta in grid.deltas:
            rows.append(_row(seed, depth, p, delta, theorems.verify_theorem1(model, family, p, delta, primal=primal)))
            rows.append(_row(seed, depth, p, delta, theorems.verify_theorem2(model, family, p, delta, primal=primal)))
        if grid.diagnostics:
            diag = theorems.proof_diagnostics(model, family, p)
            for name in ("hytonen", "nested", "stopping"):
                group = [r for r in diag if r.name == name]
                if group:
                    rows.append(_row(seed, depth, p, None, _worst(group)))
    return rows


def _run_star(args):
    return run_instance(*args)


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def max_ratio(self, inequality: str, delta: float | None = None) -> float:
        vals = [r.ratio for r in self.rows if r.inequality == inequality
                and (delta is None or r.delta is None or math.isclose(r.delta, delta))]
        return max(vals) if vals else math.nan

    def calibration(self) -> dict[str, float]:
        return {name: self.max_ratio(name, None if name == "sawyer" else CALIBRATION_DELTA)
                for name in CALIBRATED}

    def check_calibration(self, frozen: dict[str, float]) -> dict[str, bool]:
        """``ratio <= C_cal * (1 + 1e-6)`` for every calibrated inequality."""
        out = {}
        for name in CALIBRATED:
            delta = None if name == "sawyer" else CALIBRATION_DELTA
            out[name] = self.max_ratio(name, delta) <= frozen[name] * (1 + CALIBRATION_RTOL)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in self.rows:
            writer.writerow([r.seed, r.depth, repr(r.p), "" if r.delta is None else repr(r.delta),
                             r.inequality, repr(r.lhs), repr(r.rhs), repr(r.ratio), int(r.passed)])
        return buf.getvalue()


def run_sweep(grid: SweepGrid, workers: int | None = 1) -> SweepResult:
    """Run every (depth, seed) task; ``workers > 1`` uses a process pool."""
    tasks = [(t, grid) for t in grid.tasks()]
    if workers is not None and workers <= 1:
        chunks = [_run_star(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_star, tasks, chunksize=2))
    rows = sorted((r for chunk in chunks for r in chunk), key=SweepRow.key)
    return SweepResult(rows)

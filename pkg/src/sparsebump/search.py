"""Simulated annealing for weight pairs that push an inequality's ratio up.

The state is the pair of log-densities (plus, optionally, the family).  Moves
are multiplicative, so densities stay strictly positive, and scale-free.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import theorems
from .lattice import ROOT, Cube, WeightedModel, random_model
from .sparse import SparseFamily, generate_sparse, verify_sparse

logger = logging.getLogger(__name__)

OBJECTIVES = ("theorem1", "theorem2", "sawyer", "hytonen", "plain_ap")
PROPOSALS = ("cellwise-multiplicative", "block-resample")
SEARCH_RESTARTS = 4


@dataclass
class SearchConfig:
    objective: str = "theorem1"
    p: float = 2.0
    delta: float = 0.2
    depth: int = 4
    iterations: int = 500
    seed: int = 0
    proposal: str = "cellwise-multiplicative"
    step: float = 0.5
    min_step: float = 1e-3
    plateau: int = 50
    initial_temperature: float = 0.05
    cooling: float = 0.99
    family_mutation_rate: float = 0.0
    log2_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.proposal not in PROPOSALS:
            raise ValueError(f"proposal must be one of {PROPOSALS}")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.step <= 0 or self.min_step <= 0:
            raise ValueError("step sizes must be positive")
        if self.p <= 1:
            raise ValueError("p must exceed 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SearchResult:
    best_ratio: float
    best_model: WeightedModel
    best_family: SparseFamily
    trace: list[tuple[int, float]] = field(repr=False)
    rejected: int = 0
    accepted: int = 0


class EvaluationFailed(RuntimeError):
    pass


def evaluate(config: SearchConfig, model: WeightedModel, family: SparseFamily,
             restarts: int | None = None) -> float:
    """Ratio of the configured objective; ``restarts=None`` means full precision."""
    kw = {} if restarts is None else {"restarts": restarts}
    p = config.p
    if config.objective == "hytonen":
        top = family.tops[0] if ROOT not in family else ROOT
        return theorems.verify_hytonen(model, family.cubes, top, p).ratio
    if config.objective == "sawyer":
        rep = theorems.verify_sawyer(model, family, p, norm_kwargs=kw)
        if not rep.extra["norm_converged"]:
            raise EvaluationFailed("norm estimate did not converge")
        return rep.ratio
    if config.objective == "theorem1":
        rep = theorems.verify_theorem1(model, family, p, config.delta, norm_kwargs=kw)
    elif config.objective == "theorem2":
        rep = theorems.verify_theorem2(model, family, p, config.delta, norm_kwargs=kw)
    else:
        rep = theorems.verify_plain_ap(model, family, p, norm_kwargs=kw)
    if not rep.extra["norm_converged"]:
        raise EvaluationFailed("norm estimate did not converge")
    return rep.ratio


def _random_cube(rng: np.random.Generator, depth: int) -> Cube:
    level = int(rng.integers(0, depth + 1))
    return Cube(level, int(rng.integers(0, 1 << level)))


def _propose(config: SearchConfig, rng: np.random.Generator, logs: np.ndarray, step: float) -> np.ndarray:
    """Perturb the log-densities of one weight on one random cube."""
    new = logs.copy()
    row = int(rng.integers(0, 2))
    sl = _random_cube(rng, config.depth).cells(config.depth)
    n = sl.stop - sl.start
    if config.proposal == "cellwise-multiplicative":
        new[row, sl] += step * rng.standard_normal(n)
    else:
        new[row, sl] += step * rng.standard_normal()
    if config.log2_bounds is not None:
        lo, hi = config.log2_bounds
        np.clip(new, lo * math.log(2), hi * math.log(2), out=new)
    return new


def _mutate_family(rng: np.random.Generator, family: SparseFamily) -> SparseFamily | None:
    cube = _random_cube(rng, family.depth)
    if cube == ROOT:
        return None
    cand = family.with_toggled(cube)
    return cand if verify_sparse(cand).ok else None


def _model(depth: int, logs: np.ndarray) -> WeightedModel:
    return WeightedModel(depth, np.exp(logs[0]), np.exp(logs[1]))


def extremal_search(config: SearchConfig, model: WeightedModel | None = None,
                    family: SparseFamily | None = None) -> SearchResult:
    """Anneal toward large ratios of ``config.objective``.

    Metropolis acceptance on the log-ratio with geometric cooling; the step
    is halved after ``plateau`` iterations without a new best.  Inner norm
    evaluations use a reduced number of restarts, the returned best is
    re-evaluated at full precision.
    """
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = random_model(config.depth, config.seed, "lognormal", spread=0.5)
    if family is None:
        family = generate_sparse(config.depth, config.seed)
    if model.depth != config.depth or family.depth != config.depth:
        raise ValueError("initial model/family depth must match config.depth")
    logs = np.log(np.vstack([model.w, model.sigma]))
    if config.log2_bounds is not None:
        lo, hi = config.log2_bounds
        logs = np.clip(logs, lo * math.log(2), hi * math.log(2))
    model = _model(config.depth, logs)

    cur_val = evaluate(config, model, family, SEARCH_RESTARTS)
    cur_logs, cur_family = logs, family
    best_val, best_logs, best_family = cur_val, logs, family
    trace = [(0, best_val)]
    step, since_best, rejected, accepted = config.step, 0, 0, 0
    temp = config.initial_temperature

    for it in range(1, config.iterations):
        cand_family = cur_family
        if config.family_mutation_rate > 0 and rng.random() < config.family_mutation_rate:
            mutated = _mutate_family(rng, cur_family)
            if mutated is None:
                rejected += 1
                trace.append((it, best_val))
                continue
            cand_logs, cand_family = cur_logs, mutated
        else:
            cand_logs = _propose(config, rng, cur_logs, step)
        try:
            val = evaluate(config, _model(config.depth, cand_logs), cand_family, SEARCH_RESTARTS)
        except (EvaluationFailed, ValueError, FloatingPointError) as exc:
            logger.info("iteration %d: sample rejected (%s)", it, exc)
            rejected += 1
            trace.append((it, best_val))
            continue
        gain = math.log(val) - math.log(cur_val) if val > 0 and cur_val > 0 else val - cur_val
        if gain >= 0 or rng.random() < math.exp(gain / max(temp, 1e-300)):
            cur_val, cur_logs, cur_family = val, cand_logs, cand_family
            accepted += 1
        if cur_val > best_val:
            best_val, best_logs, best_family = cur_val, cur_logs, cur_family
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.plateau:
                step = max(step / 2.0, config.min_step)
                since_best = 0
        temp *= config.cooling
        trace.append((it, best_val))

    best_model = _model(config.depth, best_logs)
    final = evaluate(config, best_model, best_family)
    return SearchResult(best_ratio=final, best_model=best_model, best_family=best_family,
                        trace=trace, rejected=rejected, accepted=accepted)

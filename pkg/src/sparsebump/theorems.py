"""Numerical checks of the two-weight bounds and the estimates behind them.

Each check returns a :class:`VerificationReport` carrying both sides of one
inequality.  Where a constant is provable on the 1/2-sparse dyadic model it
is recorded in ``bound`` and ``passed`` says whether ``lhs <= bound * rhs``
held; purely observational reports leave ``bound`` as ``None``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from . import analysis
from .analysis import (
    ap_constant,
    direct_bump,
    direct_bump_constant,
    dual_exponent,
    entropy_bump,
    entropy_bump_constant,
    entropy_rho,
    restricted_ap,
    testing_constants,
)
from .lattice import Cube, WeightedModel
from .operator import NormEstimate, dual_norm, norm
from .sparse import SparseFamily, verify_sparse

# square <= 2 * nested double sum, and the Carleson packing constant 2
HYTONEN_P2_BOUND = 4.0
# |E_Q| >= |Q| / 2 costs a factor 2 (rho < 2^(r+1) is already in rhs); the
# asserted constant doubles that for the |E_Q| ~ |Q| step taken two-sided
STOPPING_BOUND = 4.0
ARITH_SLACK = 1e-12
REVERSE_SLACK = 1e-9
DUALITY_RTOL = 1e-5


@dataclass
class VerificationReport:
    name: str
    lhs: float
    rhs: float
    params: dict = field(default_factory=dict)
    witness: dict = field(default_factory=dict)
    bound: float | None = None
    passed: bool = True
    extra: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        if self.rhs > 0:
            return self.lhs / self.rhs
        return math.inf if self.lhs > 0 else 0.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ratio"] = self.ratio
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _check(lhs: float, rhs: float, bound: float, slack: float = ARITH_SLACK) -> bool:
    return lhs <= bound * rhs * (1.0 + slack) + slack


# ---------------------------------------------------------------------------
# level sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevelSet:
    mode: str
    r: int
    cubes: tuple[Cube, ...]
    maximal: tuple[Cube, ...]


def dyadic_band(x: float) -> int:
    """The integer ``r`` with ``2^r <= x < 2^(r+1)``, exactly (via frexp)."""
    if not x > 0:
        raise ValueError(f"band needs a positive value, got {x}")
    _, e = math.frexp(x)
    return e - 1


def maximal_cubes(cubes: Iterable[Cube]) -> list[Cube]:
    cubes = sorted(cubes)
    members = set(cubes)
    return [q for q in cubes if not any(a in members for a in q.ancestors())]


def levelset_decompose(model: WeightedModel, family: SparseFamily, P: Cube,
                       mode: str = "entropy") -> list[LevelSet]:
    """Split ``{Q in family, Q ⊆ P}`` into dyadic bands of ``rho_sigma(Q)`` or ``<sigma>_Q``."""
    if mode == "entropy":
        key = lambda q: entropy_rho(model, q)  # noqa: E731
    elif mode == "average":
        key = lambda q: model.average("sigma", q)  # noqa: E731
    else:
        raise ValueError(f"mode must be 'entropy' or 'average', got {mode!r}")
    bands: dict[int, list[Cube]] = {}
    for q in family.inside(P):
        bands.setdefault(dyadic_band(key(q)), []).append(q)
    return [LevelSet(mode, r, tuple(cs), tuple(maximal_cubes(cs))) for r, cs in sorted(bands.items())]


# ---------------------------------------------------------------------------
# proof-internal estimates
# ---------------------------------------------------------------------------

def verify_stopping_estimate(model: WeightedModel, family: SparseFamily,
                             levelset: LevelSet) -> VerificationReport:
    """``sum_{Q in band} sigma(Q)`` against ``2^(r+1) sum_{maximal} sigma(Q*)``."""
    if levelset.mode != "entropy":
        raise ValueError("stopping estimate uses entropy level sets")
    lhs = math.fsum(model.measure("sigma", q) for q in levelset.cubes)
    rhs = 2.0 ** (levelset.r + 1) * math.fsum(model.measure("sigma", q) for q in levelset.maximal)
    return VerificationReport(
        name="stopping", lhs=lhs, rhs=rhs, params={"r": levelset.r},
        witness={"maximal": [q.to_dict() for q in levelset.maximal]},
        bound=STOPPING_BOUND, passed=_check(lhs, rhs, STOPPING_BOUND))


def verify_hytonen(model: WeightedModel, collection: Iterable[Cube], P: Cube, p: float) -> VerificationReport:
    """``int_P (sum <sigma>_Q 1_Q)^p w`` against ``[w,sigma]^coll_p * sum sigma(Q)``.

    Both sums run over the members of ``collection`` inside ``P``.  At ``p = 2``
    the ratio is at most 4 for any 1/2-sparse collection: the square is at most
    twice the nested double sum, and each inner sum packs into ``2|Q|``.
    """
    cubes = [q for q in collection if P.contains(q)]
    if not cubes:
        raise ValueError("Hytonen check needs a nonempty collection inside P")
    stack = analysis.collection_stack(model, cubes, P)
    sl = P.cells(model.depth)
    lhs = float(np.sum(stack ** p * model.w[sl]) * model.cell_length)
    ap = restricted_ap(model, p, cubes)
    rhs = ap * math.fsum(model.measure("sigma", q) for q in cubes)
    bound = HYTONEN_P2_BOUND if p == 2 else None
    return VerificationReport(
        name="hytonen", lhs=lhs, rhs=rhs, params={"p": p}, witness={"P": P.to_dict(), "size": len(cubes)},
        bound=bound, passed=_check(lhs, rhs, bound) if bound is not None else True,
        extra={"restricted_ap": ap})


def nested_double_sum(model: WeightedModel, cubes: Iterable[Cube]) -> float:
    """``sum_Q sum_{Q' ⊆ Q} <sigma>_Q <sigma>_Q' w(Q')`` over pairs from ``cubes`` (diagonal included)."""
    cubes = sorted(cubes)
    terms = []
    for Q in cubes:
        aQ = model.average("sigma", Q)
        for Qp in cubes:
            if Q.contains(Qp):
                terms.append(aQ * model.average("sigma", Qp) * model.measure("w", Qp))
    return math.fsum(terms)


def verify_nested_expansion(model: WeightedModel, levelset: LevelSet | Iterable[Cube],
                            P: Cube) -> VerificationReport:
    """``double <= square <= 2 * double`` for the squared stack of a nested-or-disjoint collection.

    Pointwise the cubes through a cell form a chain, and
    ``(sum a)^2 = 2 * sum_{nested pairs} a a' - sum a^2``.
    """
    cubes = levelset.cubes if isinstance(levelset, LevelSet) else tuple(levelset)
    cubes = [q for q in cubes if P.contains(q)]
    stack = analysis.collection_stack(model, cubes, P)
    sl = P.cells(model.depth)
    square = float(np.sum(stack ** 2 * model.w[sl]) * model.cell_length)
    double = nested_double_sum(model, cubes)
    lower = double <= square * (1.0 + ARITH_SLACK)
    upper = square <= 2.0 * double * (1.0 + ARITH_SLACK)
    return VerificationReport(
        name="nested", lhs=square, rhs=double, params={"p": 2},
        witness={"P": P.to_dict(), "size": len(cubes)}, bound=2.0, passed=lower and upper,
        extra={"lower_ok": lower, "upper_ok": upper})


# ---------------------------------------------------------------------------
# Sawyer-type testing and the two main bounds
# ---------------------------------------------------------------------------

def testing_and_norms(model, family, p, norm_method, norm_kwargs, primal=None, dual=None):
    T1, T2 = testing_constants(model, family, p)
    kw = dict(norm_kwargs or {})
    if primal is None:
        starts = _indicator(model, T1.witness)
        primal = norm(model, family, p, method=norm_method, **_with_start(norm_method, p, kw, starts))
    if dual is None:
        starts = _indicator(model, T2.witness)
        q = dual_exponent(p)
        dual = dual_norm(model, family, p, method=norm_method, **_with_start(norm_method, q, kw, starts))
    return T1, T2, primal, dual


def _indicator(model: WeightedModel, cube: Cube) -> np.ndarray:
    f = np.zeros(model.n_cells)
    f[cube.cells(model.depth)] = 1.0
    return f


def _with_start(method: str, p: float, kw: dict, start: np.ndarray) -> dict:
    # the ascent never lowers the ratio, so seeding with the testing witness
    # guarantees the estimate is at least the tested value
    if method == "ascent" or (method == "auto" and p != 2):
        return {**kw, "starts": start}
    return kw


def verify_sawyer(model: WeightedModel, family: SparseFamily, p: float, norm_method: str = "auto",
                  norm_kwargs: dict | None = None, primal: NormEstimate | None = None,
                  dual: NormEstimate | None = None) -> VerificationReport:
    """Norm against ``T1^(1/p) + T2^(1/p')``, plus the reverse bounds and duality.

    ``passed`` covers the reverse bounds ``T1^(1/p) <= norm``,
    ``T2^(1/p') <= dual norm`` and primal/dual agreement; the forward ratio
    itself has no provable constant and is only reported.
    """
    q = dual_exponent(p)
    T1, T2, primal, dual = testing_and_norms(model, family, p, norm_method, norm_kwargs, primal, dual)
    t1, t2 = T1.value ** (1.0 / p), T2.value ** (1.0 / q)
    rev1 = t1 <= primal.value + REVERSE_SLACK
    rev2 = t2 <= dual.value + REVERSE_SLACK
    dual_gap = abs(dual.value - primal.value) / primal.value
    return VerificationReport(
        name="sawyer", lhs=primal.value, rhs=t1 + t2, params={"p": p},
        witness={"T1": T1.witness.to_dict(), "T2": T2.witness.to_dict()},
        passed=rev1 and rev2 and dual_gap < DUALITY_RTOL,
        extra={"T1": T1.value, "T2": T2.value, "dual_norm": dual.value, "dual_gap": dual_gap,
               "reverse_T1_ok": rev1, "reverse_T2_ok": rev2, "norm_method": primal.method,
               "norm_converged": primal.converged and dual.converged})


def _theorem_report(name, model, family, p, delta, c_primal, c_dual, primal, extra_params=None):
    q = dual_exponent(p)
    rhs = c_primal.value ** (1.0 / p) + c_dual.value ** (1.0 / q)
    params = {"p": p, "delta": delta}
    params.update(extra_params or {})
    return VerificationReport(
        name=name, lhs=primal.value, rhs=rhs, params=params,
        witness={"primal": c_primal.witness.to_dict(), "dual": c_dual.witness.to_dict()},
        extra={"constant": c_primal.value, "dual_constant": c_dual.value,
               "norm_method": primal.method, "norm_converged": primal.converged})


def verify_theorem1(model: WeightedModel, family: SparseFamily, p: float, delta: float = analysis.DEFAULT_DELTA,
                    norm_method: str = "auto", norm_kwargs: dict | None = None,
                    primal: NormEstimate | None = None) -> VerificationReport:
    """Norm against ``[w,sigma]_{p,eps_p}^(1/p) + [sigma,w]_{p',eps_p'}^(1/p')``."""
    q = dual_exponent(p)
    if primal is None:
        primal = norm(model, family, p, method=norm_method, **(norm_kwargs or {}))
    c1 = entropy_bump_constant(model, p, entropy_bump(p, delta), "w_sigma")
    c2 = entropy_bump_constant(model, q, entropy_bump(q, delta), "sigma_w")
    return _theorem_report("theorem1", model, family, p, delta, c1, c2, primal)


def verify_theorem2(model: WeightedModel, family: SparseFamily, p: float, delta: float = analysis.DEFAULT_DELTA,
                    norm_method: str = "auto", norm_kwargs: dict | None = None,
                    primal: NormEstimate | None = None) -> VerificationReport:
    """Norm against ``[[w,sigma]]_{p,alpha_p}^(1/p) + [[sigma,w]]_{p',alpha_p'}^(1/p')``."""
    q = dual_exponent(p)
    if primal is None:
        primal = norm(model, family, p, method=norm_method, **(norm_kwargs or {}))
    c1 = direct_bump_constant(model, p, direct_bump(p, delta), "w_sigma")
    c2 = direct_bump_constant(model, q, direct_bump(q, delta), "sigma_w")
    return _theorem_report("theorem2", model, family, p, delta, c1, c2, primal)


def verify_plain_ap(model: WeightedModel, family: SparseFamily, p: float, norm_method: str = "auto",
                    norm_kwargs: dict | None = None, primal: NormEstimate | None = None) -> VerificationReport:
    """Norm against the un-bumped ``[w,sigma]_p^(1/p) + [sigma,w]_p'^(1/p')`` (comparison only)."""
    q = dual_exponent(p)
    if primal is None:
        primal = norm(model, family, p, method=norm_method, **(norm_kwargs or {}))
    c1 = ap_constant(model, p, "w_sigma")
    c2 = ap_constant(model, q, "sigma_w")
    return _theorem_report("plain_ap", model, family, p, None, c1, c2, primal)


# ---------------------------------------------------------------------------
# all checks on one instance
# ---------------------------------------------------------------------------

def proof_diagnostics(model: WeightedModel, family: SparseFamily, p: float) -> list[VerificationReport]:
    """Hytonen, nested-expansion and stopping checks for every member ``P``.

    Hytonen runs on the full sub-collection under ``P`` and on each entropy
    band; the nested expansion and stopping estimate run on each entropy band.
    """
    reports = []
    for P in family.cubes:
        reports.append(verify_hytonen(model, family.inside(P), P, p))
        for band in levelset_decompose(model, family, P, "entropy"):
            reports.append(verify_hytonen(model, band.cubes, P, p))
            reports.append(verify_nested_expansion(model, band, P))
            reports.append(verify_stopping_estimate(model, family, band))
    return reports


def verify_all(model: WeightedModel, family: SparseFamily, p: float, delta: float = analysis.DEFAULT_DELTA,
               norm_method: str = "auto", norm_kwargs: dict | None = None,
               which: Iterable[str] = ("sawyer", "theorem1", "theorem2", "plain_ap", "diagnostics")
               ) -> list[VerificationReport]:
    """Run the selected checks on one instance, sharing a single primal and dual norm."""
    which = set(which)
    sparse_report = verify_sparse(family)
    reports = [VerificationReport(
        name="sparse", lhs=sparse_report.worst_fraction, rhs=0.5, bound=1.0, passed=sparse_report.ok,
        witness={"P": sparse_report.worst_P.to_dict() if sparse_report.worst_P else None})]
    T1, T2, primal, dual = testing_and_norms(model, family, p, norm_method, norm_kwargs)
    if "sawyer" in which:
        reports.append(verify_sawyer(model, family, p, primal=primal, dual=dual))
    if "theorem1" in which:
        reports.append(verify_theorem1(model, family, p, delta, primal=primal))
    if "theorem2" in which:
        reports.append(verify_theorem2(model, family, p, delta, primal=primal))
    if "plain_ap" in which:
        reports.append(verify_plain_ap(model, family, p, primal=primal))
    if "diagnostics" in which:
        reports.extend(proof_diagnostics(model, family, p))
    return reports

"""The sparse operator ``f -> T_S(f sigma)`` and its ``L^p(sigma) -> L^p(w)`` norm.

The kernel is nonnegative, so ``|T(f sigma)| <= T(|f| sigma)`` pointwise and
the norm is attained on nonnegative ``f``.  All maximization is therefore done
on the nonnegative cone.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, eigsh

from .analysis import dual_exponent
from .lattice import WeightedModel, as_cell_function, pyramid
from .sparse import SparseFamily

logger = logging.getLogger(__name__)

DENSE_LIMIT = 12
DEFAULT_RESTARTS = 16
NORM_METHODS = ("auto", "eigen", "ascent", "brute")


class DenseLimitError(ValueError):
    """Dense kernel requested above the configured depth limit."""


@dataclass
class NormEstimate:
    value: float
    method: str
    maximizer: np.ndarray = field(repr=False)
    restarts: int = 1
    residual: float = 0.0
    converged: bool = True
    spread: float = 0.0

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "method": self.method,
            "maximizer": self.maximizer.tolist(),
            "certificate": {"restarts": self.restarts, "residual": self.residual,
                            "converged": self.converged, "spread": self.spread},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _check_family(model: WeightedModel, family: SparseFamily) -> None:
    if family.depth != model.depth:
        raise ValueError(f"family depth {family.depth} differs from model depth {model.depth}")


def apply_sparse(model: WeightedModel, family: SparseFamily, f, weight: str = "sigma") -> np.ndarray:
    """Cell values of ``sum_{S in family} <f mu>_S 1_S`` with ``mu = weight``.

    One upward pass for the cube sums, one downward pass for the stacking.
    """
    _check_family(model, family)
    f = as_cell_function(f, model.depth)
    sums = pyramid(f * model.density(weight) * model.cell_length)
    masks = family.level_masks
    acc = np.where(masks[0], sums[0], 0.0)
    for lv in range(1, model.depth + 1):
        acc = np.repeat(acc, 2) + np.where(masks[lv], sums[lv] * float(1 << lv), 0.0)
    return acc


def _membership_matrix(model: WeightedModel, family: SparseFamily) -> np.ndarray:
    """``B[x, c] = sum of 2^level(S)`` over members ``S`` containing both cells."""
    n = model.n_cells
    B = np.zeros((n, n))
    for S in family.cubes:
        sl = S.cells(model.depth)
        B[sl, sl] += float(1 << S.level)
    return B


def kernel_matrix(model: WeightedModel, family: SparseFamily, weight: str = "sigma",
                  dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """Dense ``K`` with ``T(f mu) = K @ f``; ``K[x, c] = sum_S mu_c |c| / |S|``."""
    _check_family(model, family)
    if model.depth > dense_limit:
        raise DenseLimitError(f"depth {model.depth} exceeds dense limit {dense_limit}; "
                              "use apply_sparse")
    B = _membership_matrix(model, family)
    return B * (model.density(weight) * model.cell_length)[None, :]


def lp_norm(values: np.ndarray, density: np.ndarray, h: float, p: float, axis=0) -> np.ndarray:
    """``(sum |v|^p * density * h)^(1/p)`` along ``axis``."""
    d = density if values.ndim == 1 else density[:, None]
    return (np.sum(np.abs(values) ** p * d, axis=axis) * h) ** (1.0 / p)


def ratio(model: WeightedModel, family: SparseFamily, f, p: float) -> float:
    """``||T(f sigma)||_{L^p(w)} / ||f||_{L^p(sigma)}``."""
    f = as_cell_function(f, model.depth)
    h = model.cell_length
    num = lp_norm(apply_sparse(model, family, f), model.w, h, p)
    den = lp_norm(f, model.sigma, h, p)
    return float(num / den)


# ---------------------------------------------------------------------------
# p = 2
# ---------------------------------------------------------------------------

def norm_p2(model: WeightedModel, family: SparseFamily, dense_limit: int = DENSE_LIMIT) -> NormEstimate:
    """Exact ``L^2(sigma) -> L^2(w)`` norm.

    With ``A = D_w^(1/2) B D_sigma^(1/2)`` (``D`` = density times cell length)
    the squared norm is the top eigenvalue of ``A^T A``.  Above the dense
    limit the same symmetric form is applied matrix-free.
    """
    _check_family(model, family)
    h = model.cell_length
    sw, ss = np.sqrt(model.w * h), np.sqrt(model.sigma * h)
    if model.depth <= dense_limit:
        A = sw[:, None] * _membership_matrix(model, family) * ss[None, :]
        G = A.T @ A
        n = G.shape[0]
        vals, vecs = scipy.linalg.eigh(G, subset_by_index=[n - 1, n - 1])
        lam, v = float(vals[0]), vecs[:, 0]
        resid = float(np.linalg.norm(G @ v - lam * v) / max(lam, np.finfo(float).tiny))
    else:
        def matvec(g):
            g = np.ravel(g)
            u = apply_sparse(model, family, g / ss * 1.0)      # T(f sigma), f = g / sqrt(sigma h)
            back = apply_sparse(model, family, u, weight="w")  # adjoint: T(u w)
            return back * ss
        op = LinearOperator((model.n_cells, model.n_cells), matvec=matvec, dtype=float)
        vals, vecs = eigsh(op, k=1, which="LA", tol=1e-14)
        lam, v = float(vals[0]), vecs[:, 0]
        resid = float(np.linalg.norm(matvec(v) - lam * v) / max(lam, np.finfo(float).tiny))
    f = np.abs(v) / ss
    f /= lp_norm(f, model.sigma, h, 2.0)
    return NormEstimate(value=float(np.sqrt(max(lam, 0.0))), method="exact_eigen_p2",
                        maximizer=f, restarts=1, residual=resid, converged=True)


# ---------------------------------------------------------------------------
# general p: nonlinear power iteration on the cone
# ---------------------------------------------------------------------------

class _Operator:
    """Forward map ``f -> T(f sigma)`` and adjoint ``u -> T(u w)`` on column batches."""

    def __init__(self, model: WeightedModel, family: SparseFamily, dense_limit: int):
        self.model, self.family = model, family
        self.dense = model.depth <= dense_limit
        if self.dense:
            B = _membership_matrix(model, family)
            h = model.cell_length
            self.K = B * (model.sigma * h)[None, :]
            self.Kadj = B * (model.w * h)[None, :]

    def _cols(self, F, weight):
        return np.column_stack([apply_sparse(self.model, self.family, F[:, j], weight)
                                for j in range(F.shape[1])])

    def forward(self, F):
        return self.K @ F if self.dense else self._cols(F, "sigma")

    def adjoint(self, U):
        return self.Kadj @ U if self.dense else self._cols(U, "w")


def _ascent(op: _Operator, F: np.ndarray, p: float, tol: float, max_iter: int):
    """Run the fixed-point map ``f <- (T*(w (T f sigma)^(p-1)))^(p'-1)`` on each column.

    This is the stationarity condition of the ratio on the cone; for a
    nonnegative kernel each step does not decrease the ratio.
    """
    model = op.model
    h = model.cell_length
    q1 = 1.0 / (p - 1.0)
    F = F / lp_norm(F, model.sigma, h, p)[None, :]
    vals = lp_norm(op.forward(F), model.w, h, p)
    resid = np.full(F.shape[1], np.inf)
    active = np.ones(F.shape[1], dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        Fa = F[:, idx]
        U = op.forward(Fa)
        G = op.adjoint(U ** (p - 1.0)) ** q1
        norms = lp_norm(G, model.sigma, h, p)
        G = G / norms[None, :]
        new_vals = lp_norm(op.forward(G), model.w, h, p)
        change = np.abs(new_vals - vals[idx]) / new_vals
        step = np.max(np.abs(G - Fa), axis=0) / np.max(G, axis=0)
        F[:, idx] = G
        vals[idx] = new_vals
        resid[idx] = change
        # ratio stalls long before the iterate once the top eigen-gap is small
        done = (step < tol) | ((change < 1e-14) & (it > 50))
        active[idx[done]] = False
        if not active.any():
            break
    return F, vals, resid, it


def norm_general(model: WeightedModel, family: SparseFamily, p: float,
                 restarts: int = DEFAULT_RESTARTS, seed: int = 0, tol: float = 1e-10,
                 max_iter: int = 20000, starts: np.ndarray | None = None,
                 dense_limit: int = DENSE_LIMIT) -> NormEstimate:
    """``L^p(sigma) -> L^p(w)`` norm by multiplicative ascent with seeded restarts.

    Restart 0 starts from the constant function, the others from seeded
    positive random vectors; ``starts`` (cells x k) appends caller-supplied
    nonnegative starting points.  The best value wins, ties by restart index.
    """
    dual_exponent(p)
    _check_family(model, family)
    n = model.n_cells
    rng = np.random.default_rng(seed)
    cols = [np.ones(n)] + [rng.uniform(0.05, 1.0, n) for _ in range(max(restarts, 1) - 1)]
    F0 = np.column_stack(cols)
    if starts is not None:
        F0 = np.column_stack([F0, np.asarray(starts, dtype=float).reshape(n, -1)])
    op = _Operator(model, family, dense_limit)
    F, vals, resid, iters = _ascent(op, F0, p, tol, max_iter)
    best = int(np.argmax(vals))
    converged = bool(resid[best] < 1e-9)
    if not converged:
        logger.warning("ascent did not converge (p=%s, residual %.3g after %d iterations)",
                       p, resid[best], iters)
    return NormEstimate(value=float(vals[best]), method="projected_ascent", maximizer=F[:, best].copy(),
                        restarts=F.shape[1], residual=float(resid[best]), converged=converged,
                        spread=float((vals.max() - vals.min()) / vals.max()))


def norm(model: WeightedModel, family: SparseFamily, p: float, method: str = "auto",
         **kwargs) -> NormEstimate:
    """Dispatch on ``method``: ``auto`` takes the eigensolver at p=2, ascent otherwise."""
    if method not in NORM_METHODS:
        raise ValueError(f"norm method must be one of {NORM_METHODS}")
    if method == "eigen" or (method == "auto" and p == 2):
        if p != 2:
            raise ValueError("the eigensolver path needs p = 2")
        return norm_p2(model, family, kwargs.get("dense_limit", DENSE_LIMIT))
    if method == "brute":
        return norm_brute(model, family, p, **kwargs)
    return norm_general(model, family, p, **kwargs)


def dual_norm(model: WeightedModel, family: SparseFamily, p: float, **kwargs) -> NormEstimate:
    """``||T(. w): L^p'(w) -> L^p'(sigma)||``: roles of the weights exchanged."""
    return norm(model.swapped(), family, dual_exponent(p), **kwargs)


# ---------------------------------------------------------------------------
# brute force
# ---------------------------------------------------------------------------

def atoms(model: WeightedModel, family: SparseFamily) -> np.ndarray:
    """Label of each cell by the set of members containing it.

    ``T(f sigma)`` only sees ``f`` through its sigma-integrals over these
    atoms, and for fixed integrals the ``L^p(sigma)`` norm is smallest when
    ``f`` is constant on each atom, so maximizers are atom-wise constant.
    """
    n = model.n_cells
    sig = np.zeros((n, len(family)), dtype=bool)
    for j, S in enumerate(family.cubes):
        sig[S.cells(model.depth), j] = True
    _, labels = np.unique(sig, axis=0, return_inverse=True)
    return np.ravel(labels)


def _simplex_grid(k: int, steps: int) -> np.ndarray:
    """All points of the simplex ``{x >= 0, sum x = 1}`` in dimension ``k`` with step ``1/steps``."""
    if k == 1:
        return np.ones((1, 1))
    pts = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            pts.append(prefix + [remaining])
            return
        for i in range(remaining + 1):
            rec(prefix + [i], remaining - i, slots - 1)

    rec([], steps, k)
    return np.asarray(pts, dtype=float) / steps


def norm_brute(model: WeightedModel, family: SparseFamily, p: float, steps: int = 64,
               max_points: int = 2_000_000, refine_rounds: int = 12, **_) -> NormEstimate:
    """Grid search for the maximal ratio over atom-wise constant nonnegative ``f``.

    Exhaustive over the simplex grid of step ``1/steps`` when it has at most
    ``max_points`` points.  Otherwise a coarse simplex grid is searched and
    then repeatedly refined on a shrinking box grid around the incumbent
    until the box step is below ``1/steps``.
    """
    dual_exponent(p)
    labels = atoms(model, family)
    k = int(labels.max()) + 1
    h = model.cell_length
    K = kernel_matrix(model, family)
    # collapse to atom coordinates
    P = np.zeros((model.n_cells, k))
    P[np.arange(model.n_cells), labels] = 1.0
    Ka = K @ P
    sig_atom = P.T @ (model.sigma * h)

    def ratios(X):
        num = np.sum((Ka @ X.T) ** p * (model.w * h)[:, None], axis=0) ** (1 / p)
        den = (X ** p @ sig_atom) ** (1 / p)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / den, 0.0)

    from math import comb
    s = steps
    while comb(s + k - 1, k - 1) > max_points:
        s //= 2
    grid = _simplex_grid(k, s)
    best_vals = []
    for chunk in np.array_split(grid, max(1, len(grid) // 200_000)):
        r = ratios(chunk)
        best_vals.append((r.max(), chunk[np.argmax(r)]))
    val, x = max(best_vals, key=lambda t: t[0])
    width = 1.0 / s
    rounds = 0
    while (width > 1.0 / steps or rounds == 0) and s < steps and rounds < refine_rounds:
        axis = np.linspace(-width, width, 5)
        mesh = np.stack(np.meshgrid(*([axis] * k), indexing="ij"), -1).reshape(-1, k)
        cand = np.clip(x[None, :] + mesh, 0.0, None)
        cand = cand[cand.sum(axis=1) > 0]
        cand /= cand.sum(axis=1, keepdims=True)
        r = ratios(cand)
        if r.max() > val:
            val, x = float(r.max()), cand[np.argmax(r)]
        width /= 2.0
        rounds += 1
    f = P @ x
    f = f / lp_norm(f, model.sigma, h, p)
    return NormEstimate(value=float(val), method="brute_force", maximizer=f, restarts=1,
                        residual=width, converged=True)

"""One test per acceptance criterion; each records a PASS/FAIL line in the terminal summary."""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import maximal_by_enumeration
from sparsebump import analysis, operator, theorems
from sparsebump.cli import main
from sparsebump.lattice import ROOT, Cube, WeightedModel, all_cubes
from sparsebump.sparse import SparseFamily, carleson_sums, generate_sparse, verify_sparse
from sparsebump.sweep import SweepGrid, ensemble_instance, run_sweep

FIXTURES = Path(__file__).parent / "fixtures"
ENSEMBLE_SIZE = 100
PS = (1.5, 2.0, 3.0)


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def ensemble():
    """100 seeded instances of depth 1..6 with norms, testing constants and proof diagnostics."""
    out = []
    for seed in range(ENSEMBLE_SIZE):
        depth = 1 + seed % 6
        model, family = ensemble_instance(depth, seed)
        per_p = {}
        for p in PS:
            T1, T2, primal, dual = theorems.testing_and_norms(model, family, p, "auto", None)
            per_p[p] = {"T1": T1.value, "T2": T2.value, "primal": primal, "dual": dual,
                        "diagnostics": theorems.proof_diagnostics(model, family, p)}
        per_p[2.0]["ascent"] = operator.norm_general(model, family, 2.0)
        out.append({"seed": seed, "depth": depth, "model": model, "family": family, "p": per_p})
    return out


@pytest.fixture(scope="session")
def default_sweep():
    start = time.perf_counter()
    result = run_sweep(SweepGrid(), workers=1)
    return result, time.perf_counter() - start


def test_criterion_01_sparseness_suite():
    start = time.perf_counter()
    worst, bad = 0.0, []
    for seed in range(1000):
        depth = 4 + seed % 5
        fam = generate_sparse(depth, seed)
        rep = verify_sparse(fam)
        worst = max(worst, rep.worst_fraction)
        sums = carleson_sums(fam)
        if not (rep.ok and rep.worst_fraction <= 0.5 and all(sums[P] <= 2 * P.length for P in fam.cubes)):
            bad.append(seed)
    elapsed = time.perf_counter() - start
    record(1, "sparseness", not bad and elapsed < 30,
           f"1000 families, worst fraction {worst}, failures {bad[:5]}, {elapsed:.1f}s < 30s")


def test_criterion_02_maximal_and_entropy():
    mismatches = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        depth = 1 + seed % 6
        # dyadic rationals: every cube average is exact in binary floating point
        g = rng.integers(-2 ** 20, 2 ** 20, size=1 << depth) / 1024.0
        got = analysis.dyadic_maximal(WeightedModel.constant(depth), g)
        mismatches += int(not np.array_equal(got, maximal_by_enumeration(g, depth)))
    min_rho = math.inf
    for seed in range(100):
        model, _ = ensemble_instance(1 + seed % 8, seed)
        min_rho = min(min_rho, min(float(lv.min()) for lv in analysis.rho_table(model)))
    const_dev = 0.0
    for depth in range(1, 9):
        model = WeightedModel.constant(depth, sigma=0.37 * depth)
        const_dev = max(const_dev, max(float(np.abs(lv - 1).max()) for lv in analysis.rho_table(model)))
    ok = mismatches == 0 and min_rho >= 1.0 and const_dev <= 1e-12
    record(2, "maximal/entropy", ok,
           f"maximal mismatches {mismatches}/50, min rho {min_rho!r} >= 1, constant-sigma |rho-1| {const_dev:.1e}")


def test_criterion_03_norm_oracles(ensemble):
    worst_eig = max(abs(e["p"][2.0]["ascent"].value - e["p"][2.0]["primal"].value) / e["p"][2.0]["primal"].value
                    for e in ensemble)
    worst_brute = 0.0
    for e in ensemble:
        if e["depth"] > 3:
            continue
        for p in (1.5, 3.0):
            brute = operator.norm_brute(e["model"], e["family"], p).value
            worst_brute = max(worst_brute, abs(e["p"][p]["primal"].value - brute) / brute)
    worked = operator.norm_p2(WeightedModel.constant(1), SparseFamily([ROOT, Cube(1, 0)], 1)).value
    worked_err = abs(worked - math.sqrt((3 + 2 * math.sqrt(2)) / 2))
    ok = worst_eig < 1e-6 and worst_brute < 1e-3 and worked_err < 1e-9
    record(3, "norm oracles", ok,
           f"ascent vs eigen {worst_eig:.1e} < 1e-6, ascent vs brute {worst_brute:.1e} < 1e-3, "
           f"worked example error {worked_err:.1e} < 1e-9")


def test_criterion_04_duality(ensemble):
    gap = max(abs(e["p"][p]["dual"].value - e["p"][p]["primal"].value) / e["p"][p]["primal"].value
              for e in ensemble for p in PS)
    record(4, "duality", gap < 1e-5, f"max relative gap {gap:.1e} < 1e-5 over {len(ensemble)} x {len(PS)}")


def test_criterion_05_reverse_testing(ensemble):
    margin1 = max(e["p"][p]["T1"] ** (1 / p) - e["p"][p]["primal"].value for e in ensemble for p in PS)
    margin2 = max(e["p"][p]["T2"] ** (1 - 1 / p) - e["p"][p]["dual"].value for e in ensemble for p in PS)
    ok = margin1 <= 1e-9 and margin2 <= 1e-9
    record(5, "reverse testing", ok, f"max T1^(1/p) - norm {margin1:.1e}, max T2^(1/p') - dual {margin2:.1e}")


def test_criterion_06_hytonen(ensemble):
    worst = {p: max(r.ratio for e in ensemble for r in e["p"][p]["diagnostics"] if r.name == "hytonen")
             for p in PS}
    ok = worst[2.0] <= 4.0 * (1 + 1e-12) and all(math.isfinite(v) for v in worst.values())
    record(6, "Hytonen lemma", ok,
           f"p=2 max ratio {worst[2.0]:.4f} <= 4; reported p=1.5 {worst[1.5]:.4f}, p=3 {worst[3.0]:.4f}")


def test_criterion_07_nested_expansion(ensemble):
    reps = [r for e in ensemble for r in e["p"][2.0]["diagnostics"] if r.name == "nested"]
    failed = sum(not r.passed for r in reps)
    lo = min(r.lhs / r.rhs for r in reps)
    hi = max(r.lhs / r.rhs for r in reps)
    record(7, "nested expansion", failed == 0,
           f"{len(reps)} level sets, square/double in [{lo:.4f}, {hi:.4f}] within [1, 2], failures {failed}")


def test_criterion_08_stopping(ensemble):
    reps = [r for e in ensemble for r in e["p"][2.0]["diagnostics"] if r.name == "stopping"]
    worst = max(r.ratio for r in reps)
    record(8, "stopping estimate", worst <= 4.0 and all(r.passed for r in reps),
           f"{len(reps)} entropy level sets, max ratio {worst:.4f} <= 4")


def test_criterion_09_calibration(default_sweep):
    result, _ = default_sweep
    frozen = json.loads((FIXTURES / "calibration.json").read_text())["constants"]
    held = result.check_calibration(frozen)
    detail = ", ".join(f"{k} {result.calibration()[k]:.6f} <= {frozen[k]:.6f}" for k in held)
    record(9, "calibrated ratios", all(held.values()) and result.passed, detail)


def test_criterion_10_monotone_in_delta():
    model, family = ensemble_instance(6, 7)
    deltas = (0.1, 0.2, 0.5)
    ok, details = True, []
    for p in PS:
        primal = operator.norm(model, family, p)
        ratios = [theorems.verify_theorem1(model, family, p, d, primal=primal).ratio for d in deltas]
        consts = [analysis.entropy_bump_constant(model, p, analysis.entropy_bump(p, d)).value for d in deltas]
        ok &= all(b <= a * (1 + 1e-12) for a, b in zip(ratios, ratios[1:]))
        ok &= all(b >= a * (1 - 1e-12) for a, b in zip(consts, consts[1:]))
        details.append(f"p={p}: ratio {ratios[0]:.4f}>={ratios[1]:.4f}>={ratios[2]:.4f}")
    record(10, "monotone in delta", ok, "; ".join(details))


def test_criterion_11_reproducibility(tmp_path, default_sweep):
    for name in ("a", "b"):
        main(["gen", "--depth", "7", "--seed", "42", "--out", str(tmp_path / name)])
    files_equal = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                      for f in ("model.json", "family.json"))
    model, family = ensemble_instance(6, 5)
    a = [r.to_json() for r in theorems.verify_all(model, family, 3.0)]
    b = [r.to_json() for r in theorems.verify_all(model, family, 3.0)]
    serial, elapsed = default_sweep
    parallel = run_sweep(SweepGrid(), workers=2)
    same_sweep = serial.to_csv() == parallel.to_csv()
    ok = files_equal and a == b and same_sweep and elapsed < 600
    record(11, "reproducibility", ok,
           f"files identical {files_equal}, reports identical {a == b}, "
           f"serial/parallel sweep identical {same_sweep}, default sweep {elapsed:.1f}s < 600s")

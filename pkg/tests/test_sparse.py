import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsebump.lattice import ROOT, Cube
from sparsebump.sparse import (
    SparseFamily,
    SparsenessError,
    carleson_sum,
    carleson_sums,
    exceptional_sets,
    generate_sparse,
    load_family,
    save_family,
    verify_sparse,
)


def test_verify_examples():
    rep = verify_sparse(SparseFamily([ROOT, Cube(1, 0)], 1))
    assert rep.ok and rep.worst_fraction == 0.5
    rep = verify_sparse(SparseFamily([ROOT], 3))
    assert rep.ok and rep.worst_fraction == 0.0
    rep = verify_sparse(SparseFamily([ROOT, Cube(1, 0), Cube(1, 1)], 1))
    assert not rep.ok and rep.worst_fraction == 1.0 and rep.worst_P == ROOT


def test_covered_fraction_uses_union():
    # [0,1/4) lies inside [0,1/2): the union is still half of [0,1)
    fam = SparseFamily([ROOT, Cube(1, 0), Cube(2, 0)], 2)
    assert verify_sparse(fam).worst_fraction == 0.5


def test_carleson_examples():
    fam = SparseFamily([ROOT, Cube(1, 0)], 1)
    assert carleson_sum(fam, ROOT) == 1.5
    assert carleson_sum(SparseFamily([ROOT], 1), Cube(1, 0)) == 0.0
    cascade = generate_sparse(4, profile="cascade")
    assert carleson_sum(cascade, ROOT) == 1.9375
    assert carleson_sum(fam, ROOT, strict=True) == 0.5


def test_exceptional_examples():
    E = exceptional_sets(SparseFamily([ROOT, Cube(1, 0)], 1))
    assert E[ROOT].tolist() == [False, True]
    assert E[Cube(1, 0)].tolist() == [True, False]
    assert exceptional_sets(SparseFamily([ROOT], 1))[ROOT].all()
    E = exceptional_sets(SparseFamily([ROOT, Cube(2, 0)], 2))
    assert E[ROOT].tolist() == [False, True, True, True]


def test_exceptional_requires_sparse():
    with pytest.raises(SparsenessError):
        exceptional_sets(SparseFamily([ROOT, Cube(1, 0), Cube(1, 1)], 1))


def test_generator_deterministic():
    assert generate_sparse(8, 42) == generate_sparse(8, 42)
    assert generate_sparse(8, 42) != generate_sparse(8, 43)


def test_cascade_profile():
    assert generate_sparse(5, profile="cascade").cubes == tuple(Cube(lv, 0) for lv in range(6))


@settings(max_examples=60, deadline=None)
@given(depth=st.integers(1, 9), seed=st.integers(0, 100_000),
       profile=st.sampled_from(["random", "binary", "cascade"]))
def test_sparse_invariants(depth, seed, profile):
    fam = generate_sparse(depth, seed, profile)
    assert ROOT in fam
    assert verify_sparse(fam).ok
    sums = carleson_sums(fam)
    E = exceptional_sets(fam)
    n = 1 << depth
    cover = np.zeros(n, dtype=int)
    for P in fam:
        assert sums[P] == carleson_sum(fam, P)
        assert sums[P] <= 2 * P.length
        assert E[P].sum() * 2 >= P.cells(depth).stop - P.cells(depth).start
        cover += E[P]
    assert cover.max() <= 1
    # E_Q tile the union of the family, which here is the whole root
    assert sum(E[P].sum() for P in fam) == n


def test_family_roundtrip(tmp_path):
    fam = generate_sparse(6, 3)
    path = tmp_path / "f.json"
    save_family(fam, path)
    assert load_family(path, 6) == fam
    assert isinstance(json.loads(path.read_text()), list)


def test_loader_reverifies(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps([{"level": 0, "index": 0}, {"level": 1, "index": 0}, {"level": 1, "index": 1}]))
    with pytest.raises(SparsenessError):
        load_family(path, 1)

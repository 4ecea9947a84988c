import math

import numpy as np
import pytest

from latepoints.capacity import (
    alpha_star_neighbors,
    capacity,
    classify_admissible,
    pair_capacity,
    relative_capacity,
    subadditivity_check,
)
from latepoints.geometry import Box, DirichletRegion, FiniteSet, a_sets, k_sets
from latepoints.green import green_table

TABLE3 = green_table(3, 8)
TABLE4 = green_table(4, 4)

CAP_K_MAX_D3 = 1.271113197748638670916474203095
CAP_A_MIN_D3 = 1.335471948363948449723770501931
CAP_K_MIN_D4 = 1.849398784221098051683201012328


def test_singleton_capacity():
    res = capacity(FiniteSet.of([(0, 0, 0)]), TABLE3)
    assert res.cap == pytest.approx(1.0 / TABLE3.g0, abs=1e-14)
    assert res.equilibrium[0] == pytest.approx(res.cap)


def test_pair_capacity_closed_form():
    fs = FiniteSet.of([(0, 0, 0), (2, 1, 0)])
    res = capacity(fs, TABLE3)
    closed = 2.0 / (TABLE3.g0 + TABLE3.g((2, 1, 0)))
    assert res.cap == pytest.approx(closed, abs=1e-12)
    assert pair_capacity(TABLE3.g0, TABLE3.g((2, 1, 0))) == pytest.approx(
        closed, abs=1e-14)


def test_k_set_capacities_d3():
    k1, k2 = k_sets(3)
    caps = [capacity(k, TABLE3).cap for k in (k1, k2)]
    assert max(caps) == pytest.approx(CAP_K_MAX_D3, abs=1e-8)


def test_a_set_min_capacity_d3():
    caps = [capacity(a, TABLE3).cap for a in a_sets(3)]
    assert min(caps) == pytest.approx(CAP_A_MIN_D3, abs=1e-8)


def test_k_set_capacities_d4():
    k1, k2 = k_sets(4)
    caps = [capacity(k, TABLE4).cap for k in (k1, k2)]
    assert min(caps) == pytest.approx(CAP_K_MIN_D4, abs=1e-8)


def test_equilibrium_nonnegative_and_sums():
    res = capacity(FiniteSet.of([(0, 0, 0), (1, 0, 0), (0, 1, 0)]), TABLE3)
    assert np.all(res.equilibrium >= -1e-15)
    assert res.equilibrium.sum() == pytest.approx(res.cap)


def test_alpha_star_value():
    astar = alpha_star_neighbors(TABLE3)
    assert astar == pytest.approx(0.670268665, abs=1e-8)
    assert astar == pytest.approx(1.0 - 1.0 / (2.0 * TABLE3.g0), abs=1e-15)


def test_classification_d3():
    rep = classify_admissible(3, TABLE3)
    assert rep.triples_admissible
    by_label = {c.label: c for c in rep.comparisons}
    assert by_label["K1"].admissible and by_label["K2"].admissible
    for i in range(1, 9):
        assert not by_label[f"A{i}"].admissible
    assert min(abs(c.margin) for c in rep.comparisons) >= 0.015


def test_classification_d4_and_above():
    rep4 = classify_admissible(4, TABLE4)
    assert not rep4.triples_admissible
    assert all(not c.admissible for c in rep4.comparisons)
    rep5 = classify_admissible(5)
    assert not rep5.triples_admissible
    assert rep5.effective_d == 4


def test_capacity_monotone_under_inclusion():
    small = FiniteSet.of([(0, 0, 0), (1, 0, 0)])
    large = FiniteSet.of([(0, 0, 0), (1, 0, 0), (0, 0, 1)])
    assert capacity(small, TABLE3).cap < capacity(large, TABLE3).cap


def test_subadditivity():
    a = FiniteSet.of([(0, 0, 0)])
    b = FiniteSet.of([(3, 0, 0)])
    defect = subadditivity_check(a, b, TABLE3)
    assert defect >= 0.0


def test_relative_capacity_exceeds_free_capacity():
    K = FiniteSet.of([(0, 0, 0)])
    for r in (5, 9, 15):
        rc = relative_capacity(K, DirichletRegion(Box((0, 0, 0), r)))
        assert rc.cap > 1.0 / TABLE3.g0
    # and approaches it from above as the region grows
    c5 = relative_capacity(K, DirichletRegion(Box((0, 0, 0), 5))).cap
    c15 = relative_capacity(K, DirichletRegion(Box((0, 0, 0), 15))).cap
    assert c15 < c5


def test_relative_capacity_requires_containment():
    with pytest.raises(ValueError):
        relative_capacity(FiniteSet.of([(9, 0, 0)]),
                          DirichletRegion(Box((0, 0, 0), 5)))

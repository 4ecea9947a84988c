import math

import numpy as np
import pytest

from latepoints.green import (
    GreenParams,
    bessel_asymptotic_a,
    bessel_series_t,
    canonical_key,
    green_asymptotic,
    green_table,
    green_value,
    green_value_mp,
    wide_params,
)

G0_D3 = 1.516386059151978018156012159681
G0_D4 = 1.239467121848481712678697664859


def test_bessel_series_against_scipy():
    from scipy.special import ive
    for t in (0.5, 3.0, 20.0, 70.0):
        for k in (0, 1, 5, 20):
            ours = bessel_series_t(t, k, 139)
            ref = float(ive(k, t))
            assert ours == pytest.approx(ref, rel=1e-13)


def test_bessel_asymptotic_against_scipy():
    from scipy.special import ive
    for t in (100.0, 500.0, 5000.0):
        for k in (0, 3, 10):
            ours = bessel_asymptotic_a(t, k, 30)
            ref = float(ive(k, t))
            assert ours == pytest.approx(ref, rel=1e-10)


def test_g0_ground_truth_double():
    v3, e3 = green_value((0, 0, 0))
    v4, e4 = green_value((0, 0, 0, 0))
    assert abs(v3 - G0_D3) < 1e-9
    assert abs(v4 - G0_D4) < 1e-9
    assert e3 < 1e-9 and e4 < 1e-9


def test_g_neighbor_identity():
    # mean over neighbors of g equals g(0) - 1 at the origin
    v0, _ = green_value((0, 0, 0))
    v1, _ = green_value((1, 0, 0))
    assert v1 == pytest.approx(v0 - 1.0, abs=1e-10)


def test_symmetry_of_value():
    a, _ = green_value((1, 2, 0))
    b, _ = green_value((0, -2, 1))
    # same canonical key; only the factor multiplication order differs
    assert a == pytest.approx(b, rel=1e-14)


def test_canonical_key():
    assert canonical_key((-3, 1, 2)) == (3, 2, 1)


def test_asymptotic_agreement_far():
    # g(x) approaches the continuum harmonic profile at large |x|
    x = (20, 9, 12)
    v, _ = green_value(x, wide_params(25), 3)
    assert v == pytest.approx(green_asymptotic(x, 3), rel=2e-3)


def test_table_monotone_envelope():
    table = green_table(3, 6)
    assert table.g0 == pytest.approx(G0_D3, abs=1e-12)
    assert table.covers((6, 6, 6))
    assert not table.covers((7, 0, 0))
    # decreasing along the axis
    vals = [table.g((r, 0, 0)) for r in range(7)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_table_csv_roundtrip(tmp_path):
    from latepoints.green import GreenTable
    table = green_table(3, 2)
    p = tmp_path / "g.csv"
    table.to_csv(p)
    back = GreenTable.from_csv(p)
    assert back.g0 == table.g0
    assert back.g((2, 1, 0)) == table.g((2, 1, 0))


def test_params_validation():
    with pytest.raises(ValueError):
        GreenParams(h=0.0).validate()
    with pytest.raises(ValueError):
        GreenParams(T=200.0, J=139).validate()  # T must stay at most J
    with pytest.raises(ValueError):
        GreenParams(M=10).validate()  # M h too small


def test_extended_precision_g0():
    import mpmath as mp
    with mp.workdps(50):
        v3 = green_value_mp((0, 0, 0), dps=50)
        truth = mp.mpf("1.516386059151978018156012159681")
        assert abs(v3 - truth) < mp.mpf("1e-25")


def test_err_estimate_brackets_truth():
    v, err = green_value((2, 1, 0))
    vr, _ = green_value((2, 1, 0), GreenParams().refined())
    assert abs(v - vr) <= err

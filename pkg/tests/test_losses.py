import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from svpr import autodiff as ad
from svpr.losses import (
    Constants,
    ConstantsGPS,
    Phi,
    PhiDegenerateGPS,
    PhiPrototype,
    classify_group,
    kd_loss,
    phi,
    scheme_from_json,
    scheme_to_json,
    total_loss,
    triplet_loss,
)


def points(dp, dn):
    q = np.array([[0.0, 0.0]])
    return q, np.array([[dp, 0.0]]), np.array([[0.0, dn]])


def test_triplet_hand_values():
    assert float(triplet_loss(*points(0.3, 0.5), 0.1).value) == pytest.approx(0.0)
    assert float(triplet_loss(*points(0.5, 0.3), 0.1).value) == pytest.approx(0.3)
    q, p, _ = points(0.4, 0.0)
    assert float(triplet_loss(q, p, p, 0.1).value) == pytest.approx(0.1)


def test_triplet_rejects_bad_input():
    q, p, n = points(0.1, 0.2)
    with pytest.raises(ValueError):
        triplet_loss(q, p, n, 0.0)
    with pytest.raises(ValueError):
        triplet_loss(q, p, np.zeros((1, 3)))


def test_classify_examples():
    assert classify_group(3, 15, 10) == "D1"
    assert classify_group(5, 5, 10) == "D2"
    assert classify_group(8, 2, 10) == "D3"
    assert classify_group(11, 1, 10) == "D4"


def test_classify_exhaustive_grid():
    for x in range(1, 41):
        for y in range(1, 41):
            member = [x > 10, x <= 10 and y > 10, x <= 10 and y <= 10 and x <= y, x <= 10 and y <= 10 and x > y]
            assert sum(member) == 1
            assert classify_group(x, y, 10) == ("D4", "D1", "D2", "D3")[member.index(True)]


def test_phi_hand_values():
    assert phi(1, 25) == pytest.approx(7.8528, abs=1e-4)
    assert phi(2, 5) == pytest.approx(1.5461, abs=1e-4)
    assert phi(10, 1) == pytest.approx(0.0617, abs=1e-4)
    assert phi(12, 1) == 0.0
    assert phi(7, 7) == 1.0


@given(st.integers(1, 60), st.integers(1, 60))
def test_phi_nonnegative_and_zero_on_d4(x, y):
    w = phi(x, y)
    assert w >= 0.0
    if x > 10:
        assert w == 0.0


def test_phi_rejects_rank_zero():
    with pytest.raises(ValueError):
        phi(0, 3)


def test_constants_table():
    c = Constants(8, 4, 1, 0)
    assert [c.weight(3, 15), c.weight(5, 5), c.weight(8, 2), c.weight(11, 1)] == [8, 4, 1, 0]
    with pytest.raises(ValueError):
        Constants(-1, 0, 0, 0)


def test_degenerate_and_prototype_schemes():
    assert PhiDegenerateGPS().weight(1) == pytest.approx(1 + 1 / (4 * np.log(2)))
    assert PhiDegenerateGPS().weight(11) == 0.0
    assert ConstantsGPS(1, 0).weight(3) == 1 and ConstantsGPS(1, 0).weight(30) == 0
    # (y - x) / x in place of the log damping
    assert PhiPrototype().weight(2, 5) == pytest.approx(1 + 3 / (5 * 2))


def test_scheme_json_round_trip():
    for s in (Phi(10, 20), PhiPrototype(5, 15), PhiDegenerateGPS(7), Constants(8, 4, 1, 0), ConstantsGPS(1, 0)):
        assert scheme_from_json(scheme_to_json(s)) == s


def test_kd_examples():
    g = np.array([0.6, 0.8])
    assert float(kd_loss(g, g, 3.0).value) == 0.0
    assert float(kd_loss(g, np.array([5.0, -1.0]), 0.0).value) == 0.0
    assert float(kd_loss(np.array([1.0, 0.0]), np.array([0.0, 0.0]), 2.0).value) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        kd_loss(np.zeros(3), np.zeros(4), 1.0)


def test_kd_per_row_weights():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    w = np.array([0.0, 1.5, 7.0])
    expect = sum(w[i] * ((a[i] - b[i]) ** 2).sum() for i in range(3))
    assert float(kd_loss(a, b, w).value) == pytest.approx(expect, rel=1e-12)


def test_total_loss_additivity():
    rng = np.random.default_rng(1)
    q, p, n = (rng.normal(size=(1, 5)) for _ in range(3))
    g, t = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    kd = [kd_loss(g[i], t[i], 2.0) for i in range(3)]
    expect = float(triplet_loss(q, p, n).value) + sum(2.0 * ((g[i] - t[i]) ** 2).sum() for i in range(3))
    assert float(total_loss(q, p, n, kd).value) == pytest.approx(expect, rel=1e-12)
    zero_kd = [kd_loss(g[i], t[i], 0.0) for i in range(3)]
    assert float(total_loss(q, p, n, zero_kd).value) == float(triplet_loss(q, p, n).value)
    same = np.zeros((1, 5))
    both_zero = total_loss(same, same, same + 1.0, [kd_loss(np.zeros(5), np.zeros(5), 1.0)], 0.1)
    assert float(both_zero.value) == 0.0


def test_zero_weight_kd_gives_zero_gradient():
    tape = ad.Tape()
    t = tape.leaf(np.ones((2, 3)), "t")
    grads = tape.backward(kd_loss(np.zeros((2, 3)), t, np.zeros(2)))
    assert not grads["t"].any()

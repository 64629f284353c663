import hashlib

import numpy as np
import pytest

from svpr.net import RGB_PLAN, SEG_PLAN, Mlp, StageStack, identity_init, init_params

# sha256 of F3 (rounded to 1e-9 so BLAS summation order cannot flip it) for
# seed 42 and the fixed input below, recorded from this implementation's first run
F3_GOLDEN = "e27c6485d6e81587308366b30325e20f14df582bdd8667eaeb5c5194a8b207b6"


def fixed_input():
    h, w = np.meshgrid(np.arange(128), np.arange(96), indexing="ij")
    return np.stack([np.sin(0.1 * (c + 1) * h) * np.cos(0.07 * w) for c in range(5)])[None]


def test_pyramid_shapes():
    stack = StageStack("seg", 5, SEG_PLAN)
    feats = stack.forward(init_params(stack.shapes(), 0), np.zeros((1, 5, 128, 96)))
    assert feats[4].shape == (1, 64, 4, 3)
    assert [f.shape[1:] for f in feats[:3]] == [(8, 64, 48), (16, 32, 24), (32, 16, 12)]


def test_zero_input_gives_zero_features():
    stack = StageStack("rgb", 3, RGB_PLAN)
    feats = stack.forward(init_params(stack.shapes(), 5), np.zeros((2, 3, 64, 64)))
    assert all(not f.value.any() for f in feats)


def test_shape_errors():
    stack = StageStack("rgb", 3)
    p = init_params(stack.shapes(), 0)
    with pytest.raises(ValueError):
        stack.forward(p, np.zeros((1, 4, 64, 64)))
    with pytest.raises(ValueError):
        stack.forward(p, np.zeros((1, 3, 48, 64)))


def test_f3_golden_checksum():
    stack = StageStack("seg", 5, SEG_PLAN)
    f3 = stack.forward(init_params(stack.shapes(), 42), fixed_input())[2].value
    digest = hashlib.sha256(np.ascontiguousarray(np.round(f3, 9), dtype="<f8").tobytes()).hexdigest()
    assert digest == F3_GOLDEN


def test_mlp_identity_and_bias():
    m = Mlp("m", (2, 2))
    assert m.forward(identity_init(m), np.array([1.0, 2.0])).value.tolist() == [1.0, 2.0]
    p = {"m.fc0.w": np.zeros((2, 2)), "m.fc0.b": np.array([3.0, -1.0])}
    assert m.forward(p, np.array([5.0, 7.0])).value.tolist() == [3.0, -1.0]
    with pytest.raises(ValueError):
        m.forward(p, np.ones(3))
    with pytest.raises(ValueError):
        identity_init(Mlp("x", (2, 3)))


def test_mlp_matches_naive_matmul():
    rng = np.random.default_rng(0)
    m = Mlp("m", (4, 6, 3))
    p = init_params(m.shapes(), 9)
    p["m.fc0.b"] = rng.normal(size=6)
    p["m.fc1.b"] = rng.normal(size=3)
    v = rng.normal(size=4)
    h = [max(0.0, sum(p["m.fc0.w"][i, k] * v[k] for k in range(4)) + p["m.fc0.b"][i]) for i in range(6)]
    out = [sum(p["m.fc1.w"][i, k] * h[k] for k in range(6)) + p["m.fc1.b"][i] for i in range(3)]
    assert np.allclose(m.forward(p, v).value, out, rtol=1e-12, atol=1e-12)


def test_init_determinism_and_stats():
    shapes = {"a.w": (100, 100), "a.b": (100,)}
    p1, p2, p3 = init_params(shapes, 1), init_params(shapes, 1), init_params(shapes, 2)
    assert np.array_equal(p1["a.w"], p2["a.w"])
    assert not np.array_equal(p1["a.w"], p3["a.w"])
    assert not p1["a.b"].any()
    w = p1["a.w"].ravel()
    bound = np.sqrt(6.0 / 200)
    assert np.abs(w).max() <= bound
    sigma = bound / np.sqrt(3) / np.sqrt(w.size)
    assert abs(w.mean()) < 3 * sigma


def test_init_streams_are_per_tensor():
    a = init_params({"x.w": (3, 3)}, 0)
    b = init_params({"x.w": (3, 3), "y.w": (2, 2)}, 0)
    assert np.array_equal(a["x.w"], b["x.w"])

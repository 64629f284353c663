import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from svpr import slme
from svpr.slme import (
    ADE20K_NAMES,
    BUILDINGS,
    DYNAMIC,
    SKY,
    VEGETATION,
    ClusterTable,
    LabelError,
    build_masks,
    cluster,
    decode,
    encode,
)

label_maps = hnp.arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 5))


def test_raw_table_size():
    assert len(ADE20K_NAMES) == 150
    assert len(set(ADE20K_NAMES)) == 150


def test_cluster_examples():
    idx = {n: i for i, n in enumerate(ADE20K_NAMES)}
    out = cluster(np.array([idx["car"], idx["tree"], idx["sky"], idx["building"]]))
    assert out.tolist() == [DYNAMIC, VEGETATION, SKY, BUILDINGS]
    with pytest.raises(LabelError):
        cluster(np.array([200]))


def test_cluster_table_json_round_trip(tmp_path):
    t = ClusterTable.default()
    t.save(tmp_path / "t.json")
    back = ClusterTable.load(tmp_path / "t.json")
    assert np.array_equal(back.mapping, t.mapping)
    with pytest.raises(LabelError):
        ClusterTable(np.array([0, 6]))


def test_partial_table_rejected():
    with pytest.raises(LabelError, match="total"):
        ClusterTable.from_json({"mapping": {"0": 1}, "raw_names": ["a", "b"]})


def test_encode_weights():
    lm = np.array([[BUILDINGS, DYNAMIC], [0, 1]], dtype=np.uint8)
    enc = encode(lm)
    assert enc.shape == (5, 2, 2)
    assert enc[:, 0, 0].tolist() == [0, 0, 0, 2.0, 0]
    assert enc[:, 0, 1].tolist() == [0, 0, 0, 0, 0]
    assert enc[:, 1, 0].tolist() == [0.5, 0, 0, 0, 0]
    assert enc[:, 1, 1].tolist() == [0, 1.0, 0, 0, 0]


def test_encode_per_class_values_match_weight_list():
    lm = np.arange(5, dtype=np.uint8).reshape(1, 5)
    enc = encode(lm)
    assert [enc[c, 0, c] for c in range(5)] == [0.5, 1.0, 1.0, 2.0, 2.0]


@given(label_maps)
def test_decode_inverts_encode(lm):
    assert np.array_equal(decode(encode(lm)), lm)


@given(label_maps)
def test_dynamic_pixels_all_zero(lm):
    enc = encode(lm)
    assert not enc[:, lm == DYNAMIC].any()
    assert (np.count_nonzero(enc, axis=0) == (lm != DYNAMIC)).all()


def test_encode_rejects_bad_input():
    with pytest.raises(LabelError):
        encode(np.array([[6]], dtype=np.uint8))
    with pytest.raises(LabelError):
        encode(np.zeros((2, 2), dtype=np.uint8), weights=(1, 1, 1, 1))
    with pytest.raises(LabelError):
        encode(np.zeros((2, 2), dtype=np.uint8), weights=(1, 1, 0, 1, 1))


def test_masks_uniform_sky_and_dynamic():
    m = build_masks(np.full((128, 96), SKY, dtype=np.uint8))
    assert m[3].shape == (5, 16, 12) and m[4].shape == (5, 8, 6) and m[5].shape == (5, 4, 3)
    for i in (3, 4, 5):
        assert (m[i][SKY] == 1).all()
        assert not np.delete(m[i], SKY, axis=0).any()
    d = build_masks(np.full((64, 64), DYNAMIC, dtype=np.uint8))
    assert not any(v.any() for v in d.values())


def test_masks_sample_block_centres():
    lm = np.zeros((32, 32), dtype=np.uint8)
    lm[4, 4] = BUILDINGS  # centre pixel of the first 8x8 block
    lm[0, 0] = SKY  # corner, never sampled
    m = build_masks(lm)
    assert m[3][BUILDINGS, 0, 0] == 1
    assert m[3][SKY].sum() == 0


def test_masks_batch_and_divisibility():
    lm = np.zeros((3, 64, 32), dtype=np.uint8)
    assert build_masks(lm)[3].shape == (3, 5, 8, 4)
    with pytest.raises(LabelError):
        build_masks(np.zeros((40, 32), dtype=np.uint8))
    with pytest.raises(LabelError):
        slme.downsample(np.zeros((12, 12)), 3)

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from svpr import tensorio as tio
from svpr.models import SegBranch
from svpr.slme import build_masks, encode


def test_header_bytes_for_2x2_f32(tmp_path):
    path = tmp_path / "t.svpt"
    tio.write_tensor(np.array([[1, 2], [3, 4]], dtype=np.float32), path)
    raw = path.read_bytes()
    assert raw[:7] == bytes([0x53, 0x56, 0x50, 0x54, 0x01, 0x01, 0x02])
    assert raw[7:15] == bytes([2, 0, 0, 0, 2, 0, 0, 0])
    assert len(raw) == 15 + 16
    assert raw[15:] == struct.pack("<4f", 1, 2, 3, 4)


def test_round_trip_large_tensor(tmp_path):
    t = np.random.default_rng(0).normal(size=(5, 128, 96)).astype(np.float32)
    tio.write_tensor(t, tmp_path / "x")
    back = tio.read_tensor(tmp_path / "x")
    assert back.dtype == np.float32 and back.tobytes() == t.tobytes()


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(st.sampled_from([np.float32, np.uint8]), hnp.array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=5)))
def test_encode_decode_identity(arr):
    back = tio.decode_tensor(tio.encode_tensor(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_zero_length_dim_rejected():
    with pytest.raises(tio.FormatError):
        tio.encode_tensor(np.zeros((0, 3), dtype=np.float32))


def test_bad_magic_and_truncation():
    buf = tio.encode_tensor(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(tio.FormatError, match="magic"):
        tio.decode_tensor(b"XXXX" + buf[4:])
    with pytest.raises(tio.FormatError, match="truncated"):
        tio.decode_tensor(buf[:-4])
    with pytest.raises(tio.FormatError, match="trailing"):
        tio.decode_tensor(buf + b"\0")


def test_unknown_dtype_and_bad_ndim():
    buf = bytearray(tio.encode_tensor(np.ones((2,), dtype=np.float32)))
    buf[5] = 9
    with pytest.raises(tio.FormatError):
        tio.decode_tensor(bytes(buf))
    with pytest.raises(tio.FormatError):
        tio.encode_tensor(np.ones((1, 1, 1, 1, 1), dtype=np.float32))


def test_checkpoint_forward_bitwise_equal(tmp_path):
    model = SegBranch("B-WS")
    params = tio.as_f32_exact(model.init(3))
    lm = np.random.default_rng(1).integers(0, 6, size=(2, 64, 64)).astype(np.uint8)
    enc, masks = encode(lm), build_masks(lm)
    ck = tio.Checkpoint("seg-branch", 1, 3, "abc", params, {"variant": "B-WS"})
    tio.save_checkpoint(ck, tmp_path / "c")
    back = tio.load_checkpoint(tmp_path / "c", expect_stage=1, expect_hash="abc")
    a = model.forward(params, enc, masks)[0].value
    b = model.forward(back.params, enc, masks)[0].value
    assert a.tobytes() == b.tobytes()
    assert back.meta == {"variant": "B-WS"} and back.seed == 3


def test_checkpoint_errors(tmp_path):
    p = {"a": np.ones(2)}
    with pytest.raises(tio.FormatError, match="duplicate"):
        tio.save_checkpoint(tio.Checkpoint("m", 1, 0, "h", [("a", np.ones(2)), ("a", np.zeros(2))]), tmp_path / "d")
    tio.save_checkpoint(tio.Checkpoint("m", 1, 0, "h", p), tmp_path / "c")
    with pytest.raises(tio.StageMismatchError):
        tio.load_checkpoint(tmp_path / "c", expect_stage=2)
    with pytest.raises(tio.ConfigMismatchError):
        tio.load_checkpoint(tmp_path / "c", expect_hash="other")
    with pytest.raises(tio.FormatError):
        tio.load_checkpoint(tmp_path / "c", expect_module="x")


def test_as_f32_exact_is_idempotent():
    p = {"w": np.random.default_rng(0).normal(size=10)}
    once = tio.as_f32_exact(p)
    assert np.array_equal(once["w"], tio.as_f32_exact(once)["w"])
    assert np.array_equal(once["w"].astype(np.float32).astype(np.float64), once["w"])


def test_config_hash_canonical():
    assert tio.config_hash({"a": 1, "b": 2}) == tio.config_hash({"b": 2, "a": 1})
    assert tio.config_hash({"a": 1}) != tio.config_hash({"a": 2})


def _manifest():
    pose = {"easting": 1.0, "northing": 2.0, "heading": 10.0}
    return {"entries": [{"id": 0, "pose": pose}, {"id": 1, "pose": dict(pose)}]}


def test_manifest_validation(tmp_path):
    doc = _manifest()
    tio.write_manifest(doc, tmp_path / "m.json")
    assert tio.read_manifest(tmp_path / "m.json") == doc
    dup = _manifest()
    dup["entries"][1]["id"] = 0
    with pytest.raises(tio.ManifestError, match="duplicate"):
        tio.validate_manifest(dup)
    bad = _manifest()
    bad["entries"][0]["pose"]["heading"] = 360.0
    with pytest.raises(tio.ManifestError, match="heading"):
        tio.validate_manifest(bad)
    nan = _manifest()
    nan["entries"][0]["pose"]["easting"] = float("nan")
    with pytest.raises(tio.ManifestError):
        tio.validate_manifest(nan)
    missing = _manifest()
    missing["entries"][0]["rgb"] = "rgb/0.svpt"
    with pytest.raises(tio.ManifestError, match="missing"):
        tio.validate_manifest(missing, tmp_path)


def test_descriptor_round_trip(tmp_path):
    v = np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32)
    tio.write_descriptors(v, [5, 6, 7], [("basic", 0, 4)], "basic_rgb", tmp_path / "d.svpt")
    vals, ids, layout, kind = tio.read_descriptors(tmp_path / "d.svpt")
    assert np.array_equal(vals, v.astype(np.float64))
    assert ids == [5, 6, 7] and layout == [("basic", 0, 4)] and kind == "basic_rgb"

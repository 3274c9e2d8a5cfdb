"""Checkpoint file format roundtrips."""

import numpy as np
import pytest

from lixelkit.diffcore import load_checkpoint, save_checkpoint


def test_roundtrip_arrays_and_meta(tmp_path):
    path = tmp_path / "model.lxck"
    rng = np.random.default_rng(0)
    arrays = {
        "stem.weight": rng.normal(size=(4, 3, 3, 3)),
        "stem.bias": rng.normal(size=4),
        "scalar": np.array(3.5),
    }
    meta = {"step": 17, "note": "hello"}
    save_checkpoint(path, arrays, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert set(loaded) == set(arrays)
    for k in arrays:
        assert loaded[k].shape == arrays[k].shape
        assert np.array_equal(loaded[k], arrays[k])


def test_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_payload_is_little_endian_float64(tmp_path):
    path = tmp_path / "one.lxck"
    save_checkpoint(path, {"x": np.array([1.0, 2.0])})
    raw = path.read_bytes()
    # the last 16 bytes are the two payload doubles
    assert np.frombuffer(raw[-16:], dtype="<f8").tolist() == [1.0, 2.0]

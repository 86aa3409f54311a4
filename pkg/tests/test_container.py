import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cersa_forge import container
from cersa_forge.container import MAGIC, Checkpoint, ContainerError, dumps, loads


def manifest_bytes(doc) -> bytes:
    head = json.dumps(doc).encode()
    return MAGIC + struct.pack("<Q", len(head)) + head


@settings(max_examples=60, deadline=None)
@given(
    arr=hnp.arrays(
        dtype=st.sampled_from([np.float64, np.float32]),
        shape=hnp.array_shapes(min_dims=0, max_dims=3, min_side=0, max_side=5),
        elements={"allow_nan": True, "allow_infinity": True},
    )
)
def test_round_trip_bitwise(arr):
    out = loads(dumps(Checkpoint({"t": arr, "b": arr[..., None]}, {"k": [1, "x"]})))
    for name, ref in (("t", arr), ("b", arr[..., None])):
        got = out.tensors[name]
        assert got.dtype == ref.dtype and got.shape == ref.shape
        assert got.tobytes() == np.ascontiguousarray(ref).tobytes()
    assert out.metadata == {"k": [1, "x"]}


def test_dumps_deterministic():
    ckpt = Checkpoint({"a": np.arange(3.0)}, {"z": 1, "a": 2})
    assert dumps(ckpt) == dumps(ckpt)
    raw = dumps(ckpt)
    assert raw[:8] == MAGIC
    (n,) = struct.unpack("<Q", raw[8:16])
    assert len(raw) == 16 + n + 24


def test_file_round_trip(tmp_path):
    path = container.save(tmp_path / "x" / "c.cft", Checkpoint({"w": np.eye(2)}))
    assert np.array_equal(container.load(path).tensors["w"], np.eye(2))


def test_unsupported_dtype():
    with pytest.raises(ContainerError, match="dtype"):
        dumps(Checkpoint({"i": np.arange(3)}))


@pytest.mark.parametrize(
    "raw,msg",
    [
        (b"NOTMAGIC" + b"\0" * 8, "bad magic"),
        (MAGIC + struct.pack("<Q", 999), "past end"),
        (MAGIC + struct.pack("<Q", 5) + b"{bad}", "line 1 column 2"),
    ],
)
def test_malformed_headers(raw, msg):
    with pytest.raises(ContainerError, match=msg):
        loads(raw)


def entry(**kw):
    base = {"name": "t", "shape": [2], "dtype": "f64", "offset": 0, "length": 16}
    base.update(kw)
    return base


@pytest.mark.parametrize(
    "tensors,msg",
    [
        ([entry(dtype="i8")], "unknown dtype"),
        ([entry(length=8)], "does not match shape"),
        ([entry(offset=8)], "out of bounds"),
        ([entry(shape=[-1])], "invalid shape"),
        ([entry(), entry()], "duplicate"),
        ([entry(shape=[1], length=8), entry(name="u", shape=[1], length=8, offset=4)], "overlap"),
        ([{"name": "t"}], "incomplete"),
    ],
)
def test_manifest_validation(tensors, msg):
    raw = manifest_bytes({"format_version": 1, "tensors": tensors}) + b"\0" * 16
    with pytest.raises(ContainerError, match=msg):
        loads(raw)


def test_format_version():
    with pytest.raises(ContainerError, match="format_version"):
        loads(manifest_bytes({"format_version": 2, "tensors": []}))


def test_unreadable_file(tmp_path):
    with pytest.raises(ContainerError, match="cannot read"):
        container.load(tmp_path / "missing.cft")

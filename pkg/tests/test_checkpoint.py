import struct

import numpy as np
import pytest
import torch

from dimenet.checkpoint import MAGIC, decode, encode, load_checkpoint, read_checkpoint, save_checkpoint
from dimenet.config import Config
from dimenet.errors import (
    CheckpointError,
    ConfigMismatchError,
    CorruptHeaderError,
    SchemaVersionError,
    TruncatedDataError,
)
from dimenet.gradcheck import randomize_zero_params
from dimenet.model import DimeNet, enhance


@pytest.fixture()
def model():
    m = DimeNet(Config({"dscam.zero_init": False}), seed=7)
    randomize_zero_params(m, torch.Generator().manual_seed(1))
    return m


def test_round_trip_bit_exact(tmp_path, model):
    path = tmp_path / "m.dime"
    save_checkpoint(model, path, iteration=42, rng={"seed": 3})
    loaded = load_checkpoint(path)
    a, b = model.state_dict(), loaded.state_dict()
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].dtype == b[k].dtype
        assert torch.equal(a[k], b[k]), k
    assert loaded.iteration == 42 and loaded.rng_state == {"seed": 3}
    assert loaded.config.dumps() == model.config.dumps()


def test_save_load_save_is_byte_identical(tmp_path, model):
    save_checkpoint(model, tmp_path / "a.dime")
    save_checkpoint(load_checkpoint(tmp_path / "a.dime"), tmp_path / "b.dime")
    assert (tmp_path / "a.dime").read_bytes() == (tmp_path / "b.dime").read_bytes()


def test_enhance_bitwise_identical_after_round_trip(tmp_path, model):
    img = np.random.default_rng(0).random((30, 26, 3)).astype(np.float32)
    before = enhance(img, model)
    save_checkpoint(model, tmp_path / "m.dime")
    after = enhance(img, load_checkpoint(tmp_path / "m.dime"))
    assert np.array_equal(before, after)


def test_float64_round_trip(tmp_path):
    m = DimeNet().double()
    save_checkpoint(m, tmp_path / "d.dime")
    loaded = load_checkpoint(tmp_path / "d.dime")
    assert all(p.dtype == torch.float64 for p in loaded.parameters())


def test_layout_is_documented_preamble(tmp_path, model):
    buf = encode(model.state_dict(), model.config)
    magic, version, hlen = struct.unpack_from("<4sIQ", buf)
    assert magic == MAGIC == b"DIME" and version == 1
    header = buf[16:16 + hlen].decode()
    first = [l for l in header.splitlines() if l.startswith("tensor ")][0]
    name, dtype, shape, offset, length = first.split(" ")[1:]
    assert dtype == "float32" and offset == "0"
    expected = model.state_dict()[name].numpy().astype("<f4").tobytes()
    assert buf[16 + hlen:16 + hlen + int(length)] == expected


def test_distinct_errors(model):
    buf = encode(model.state_dict(), model.config)
    with pytest.raises(CorruptHeaderError):
        decode(b"NOPE" + buf[4:])
    with pytest.raises(CorruptHeaderError):
        decode(buf[:10])
    with pytest.raises(SchemaVersionError):
        decode(buf[:4] + struct.pack("<I", 99) + buf[8:])
    with pytest.raises(TruncatedDataError):
        decode(buf[:-5])
    hlen = struct.unpack_from("<Q", buf, 8)[0]
    garbled = bytearray(buf)
    garbled[16:16 + 6] = b"bogus!"
    with pytest.raises(CorruptHeaderError):
        decode(bytes(garbled))
    # the three failure kinds are separate classes sharing one base
    kinds = {CorruptHeaderError, TruncatedDataError, SchemaVersionError}
    assert len(kinds) == 3 and all(issubclass(k, CheckpointError) for k in kinds)
    assert hlen > 0


def test_mismatched_config_names_key(tmp_path, model):
    save_checkpoint(model, tmp_path / "m.dime")
    expected = model.config.with_overrides({"moe.num_experts": 8})
    with pytest.raises(ConfigMismatchError) as info:
        load_checkpoint(tmp_path / "m.dime", expected=expected)
    assert "moe.num_experts" in str(info.value)
    assert "moe.num_experts" in info.value.keys


def test_training_keys_do_not_block_loading(tmp_path, model):
    save_checkpoint(model, tmp_path / "m.dime")
    load_checkpoint(tmp_path / "m.dime", expected=model.config.with_overrides({"train.iterations": 7}))


def test_read_checkpoint_exposes_table(tmp_path, model):
    save_checkpoint(model, tmp_path / "m.dime", iteration=5)
    ck = read_checkpoint(tmp_path / "m.dime")
    assert ck.iteration == 5
    assert {e[0] for e in ck.entries} == set(model.state_dict())

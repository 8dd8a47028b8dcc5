"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DIME"                magic
    u32                    schema version
    u64                    header length in bytes
    header                 UTF-8 text, one record per line:
                             schema <version>
                             iteration <n>
                             rng <json or ->
                             config <key> = <value>
                             tensor <name> <dtype> <shape> <offset> <length>
    data                   raw little-endian tensor bytes; offsets are relative
                           to the start of this block

``shape`` is comma-separated (``-`` for a scalar).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import Config, parse_lines
from .errors import ConfigMismatchError, CorruptHeaderError, SchemaVersionError, TruncatedDataError
from .model import DimeNet

MAGIC = b"DIME"
SCHEMA_VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


@dataclass
class Checkpoint:
    config: Config
    tensors: dict
    iteration: int = 0
    rng: dict | None = None
    entries: list = field(default_factory=list)


def _dtype_name(t: torch.Tensor) -> str:
    name = str(t.dtype).replace("torch.", "")
    if name not in _DTYPES:
        raise TypeError(f"unsupported tensor dtype {t.dtype}")
    return name


def encode(state: dict, config: Config, iteration: int = 0, rng: dict | None = None) -> bytes:
    lines = [f"schema {SCHEMA_VERSION}", f"iteration {int(iteration)}",
             "rng " + (json.dumps(rng, sort_keys=True) if rng else "-")]
    lines += [f"config {line}" for line in config.dumps().splitlines()]
    blobs, offset = [], 0
    for name, tensor in state.items():
        dname = _dtype_name(tensor)
        arr = tensor.detach().cpu().numpy().astype(_DTYPES[dname], copy=False)
        raw = arr.tobytes(order="C")
        shape = ",".join(str(s) for s in arr.shape) or "-"
        lines.append(f"tensor {name} {dname} {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    header = ("\n".join(lines) + "\n").encode("utf-8")
    return _PREAMBLE.pack(MAGIC, SCHEMA_VERSION, len(header)) + header + b"".join(blobs)


def decode(buf: bytes) -> Checkpoint:
    if len(buf) < _PREAMBLE.size:
        raise CorruptHeaderError("file too short for checkpoint preamble")
    magic, version, header_len = _PREAMBLE.unpack_from(buf)
    if magic != MAGIC:
        raise CorruptHeaderError(f"bad magic {magic!r}")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"unknown schema version {version} (expected {SCHEMA_VERSION})")
    start = _PREAMBLE.size
    if len(buf) < start + header_len:
        raise CorruptHeaderError("header extends past end of file")
    try:
        text = buf[start:start + header_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptHeaderError(f"header is not UTF-8: {exc}") from None
    data = memoryview(buf)[start + header_len:]

    iteration, rng, config_lines, entries = 0, None, [], []
    try:
        for line in text.splitlines():
            kind, _, rest = line.partition(" ")
            if kind == "schema":
                if int(rest) != version:
                    raise CorruptHeaderError("schema line disagrees with preamble")
            elif kind == "iteration":
                iteration = int(rest)
            elif kind == "rng":
                rng = None if rest == "-" else json.loads(rest)
            elif kind == "config":
                config_lines.append(rest)
            elif kind == "tensor":
                name, dname, shape, offset, length = rest.split(" ")
                dims = () if shape == "-" else tuple(int(s) for s in shape.split(","))
                entries.append((name, dname, dims, int(offset), int(length)))
            elif line:
                raise CorruptHeaderError(f"unknown header record {kind!r}")
        config = Config(parse_lines("\n".join(config_lines)))
    except CorruptHeaderError:
        raise
    except Exception as exc:  # any parse failure means the header is unusable
        raise CorruptHeaderError(f"cannot parse header: {exc}") from None

    tensors = {}
    for name, dname, dims, offset, length in entries:
        if dname not in _DTYPES:
            raise CorruptHeaderError(f"unknown dtype {dname!r} for {name}")
        if offset + length > len(data):
            raise TruncatedDataError(f"tensor {name} needs bytes {offset}..{offset + length}, "
                                     f"data block has {len(data)}")
        arr = np.frombuffer(data[offset:offset + length], dtype=_DTYPES[dname]).reshape(dims)
        tensors[name] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    return Checkpoint(config=config, tensors=tensors, iteration=iteration, rng=rng, entries=entries)


def save_checkpoint(model: DimeNet, path, iteration: int = 0, rng: dict | None = None) -> None:
    Path(path).write_bytes(encode(model.state_dict(), model.config, iteration, rng))


def read_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def load_checkpoint(path, expected: Config | None = None) -> DimeNet:
    """Rebuild the model stored at ``path``.

    When ``expected`` is given, any differing model-structure key raises
    :class:`ConfigMismatchError` naming the keys.
    """
    ckpt = read_checkpoint(path)
    if expected is not None:
        diff = ckpt.config.diff_keys(expected)
        if diff:
            raise ConfigMismatchError(diff)
    model = DimeNet(ckpt.config, seed=None)
    dtypes = {t.dtype for t in ckpt.tensors.values() if t.is_floating_point()}
    if dtypes == {torch.float64}:
        model = model.double()
    missing, unexpected = model.load_state_dict(ckpt.tensors, strict=False)
    if missing or unexpected:
        raise CorruptHeaderError(f"tensor table does not match model: missing={missing} unexpected={unexpected}")
    model.iteration = ckpt.iteration
    model.rng_state = ckpt.rng
    return model

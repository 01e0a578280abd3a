"""Binary dataset files.

Layout: ``IFOP1`` magic, little-endian u16 format version, u32 header length,
a UTF-8 JSON header, the raw little-endian arrays in header order, and a
CRC32 of everything before it as a trailing u32.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .datagen import Dataset, ExperimentSpec
from .encode import EncodedSample
from .grid import GridSpec

MAGIC = b"IFOP1"
VERSION = 1
_PREFIX = struct.Struct("<HI")
_CRC = struct.Struct("<I")
_DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4")}


class DatasetFormatError(ValueError):
    """Base class for unreadable dataset files."""


class BadMagicError(DatasetFormatError):
    pass


class VersionError(DatasetFormatError):
    pass


class TruncatedError(DatasetFormatError):
    pass


class ChecksumError(DatasetFormatError):
    pass


def _sample_arrays(s: EncodedSample):
    out = [("data", s.data)]
    if s.target is not None:
        out.append(("target", s.target))
    for k in sorted(s.extras):
        if isinstance(s.extras[k], np.ndarray):
            out.append((f"extras/{k}", s.extras[k]))
    return out


def save_dataset(dataset: Dataset, path, precision: str = "f64") -> None:
    if precision not in _DTYPES:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)}")
    dt = _DTYPES[precision]
    entries, blobs = [], []
    for s in dataset.samples:
        arrays = []
        for name, arr in _sample_arrays(s):
            a = np.asarray(arr)
            kind = "bool" if a.dtype == bool else "float"
            a = a.astype("u1" if kind == "bool" else dt)
            arrays.append({"name": name, "shape": list(a.shape), "kind": kind})
            blobs.append(np.ascontiguousarray(a).tobytes())
        entries.append({"params": s.extras.get("params", {}), "arrays": arrays,
                        "target_grid": s.target_grid.to_dict() if s.target_grid != s.grid else None})
    header = {
        "spec": dataset.spec.to_dict(),
        "manifest": dataset.manifest,
        "grid": dataset.grid.to_dict(),
        "fine_grid": dataset.fine_grid.to_dict() if dataset.fine_grid else None,
        "split": {"train": dataset.split[0], "test": dataset.split[1]},
        "precision": precision,
        "samples": entries,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + _PREFIX.pack(VERSION, len(hb)) + hb + b"".join(blobs)
    Path(path).write_bytes(body + _CRC.pack(zlib.crc32(body)))


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not a dataset file (bad magic)")
    pos = len(MAGIC)
    if len(raw) < pos + _PREFIX.size + _CRC.size:
        raise TruncatedError(f"{path}: file truncated in preamble")
    version, hlen = _PREFIX.unpack_from(raw, pos)
    if version != VERSION:
        raise VersionError(f"{path}: unsupported format version {version} (expected {VERSION})")
    pos += _PREFIX.size
    if len(raw) < pos + hlen + _CRC.size:
        raise TruncatedError(f"{path}: file truncated in header")
    try:
        header = json.loads(raw[pos:pos + hlen])
    except ValueError as exc:
        raise ChecksumError(f"{path}: header is corrupt") from exc
    pos += hlen
    dt = _DTYPES[header["precision"]]
    expected = pos + sum(int(np.prod(a["shape"])) * (1 if a["kind"] == "bool" else dt.itemsize)
                         for e in header["samples"] for a in e["arrays"])
    if len(raw) < expected + _CRC.size:
        raise TruncatedError(f"{path}: file truncated ({len(raw)} bytes, expected {expected + _CRC.size})")
    if len(raw) > expected + _CRC.size:
        raise DatasetFormatError(f"{path}: {len(raw) - expected - _CRC.size} trailing bytes")
    (crc,) = _CRC.unpack_from(raw, expected)
    if crc != zlib.crc32(raw[:expected]):
        raise ChecksumError(f"{path}: checksum mismatch")
    grid = GridSpec.from_dict(header["grid"])
    names = header["manifest"]
    samples = []
    for e in header["samples"]:
        arrays = {}
        for a in e["arrays"]:
            adt = np.dtype("u1") if a["kind"] == "bool" else dt
            count = int(np.prod(a["shape"]))
            arr = np.frombuffer(raw, adt, count, pos).reshape(a["shape"])
            pos += count * adt.itemsize
            arrays[a["name"]] = arr.astype(bool) if a["kind"] == "bool" else arr.astype(np.float64)
        extras = {k[len("extras/"):]: v for k, v in arrays.items() if k.startswith("extras/")}
        extras["params"] = e["params"]
        tg = GridSpec.from_dict(e["target_grid"]) if e.get("target_grid") else None
        samples.append(EncodedSample(grid, list(names), arrays["data"], arrays.get("target"), tg, extras))
    fine = GridSpec.from_dict(header["fine_grid"]) if header.get("fine_grid") else None
    split = (header["split"]["train"], header["split"]["test"])
    return Dataset(ExperimentSpec.from_dict(header["spec"]), samples, split, fine)

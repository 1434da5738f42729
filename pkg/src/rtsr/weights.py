"""Binary weight-file format: magic, versioned JSON header, aligned float payload.

Layout::

    "RTSR" | u32 version (major << 16 | minor, LE) | u64 header length (LE)
    | header: UTF-8 JSON {model spec, mode, tensor manifest}
    | zero padding to a 16-byte file offset
    | payload: raw little-endian float32 tensors, packed in manifest order

Tensor offsets in the manifest are relative to the payload start, strictly
increasing and contiguous; the payload size equals the sum of tensor sizes, so
a round trip is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import zoo

MAGIC = b"RTSR"
FORMAT_MAJOR = 1
FORMAT_MINOR = 1


class WeightFileError(ValueError):
    """Malformed or incompatible weight file."""


class BadMagicError(WeightFileError):
    pass


class UnsupportedVersionError(WeightFileError):
    pass


class TruncatedPayloadError(WeightFileError):
    pass


class ManifestError(WeightFileError):
    """Tensor manifest inconsistent with itself or with the model spec."""


def _pack_version(major: int, minor: int) -> int:
    return (major << 16) | minor


def _unpack_version(v: int) -> tuple[int, int]:
    return v >> 16, v & 0xFFFF


def save_weights(graph: zoo.ModelGraph, path) -> None:
    """Serialize a model graph (spec, mode, and all tensors) to ``path``."""
    params = zoo.named_params(graph)
    manifest = []
    offset = 0
    blobs = []
    for name, arr in params.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = {
        "model": zoo.spec_to_dict(graph.spec),
        "mode": graph.mode,
        "tensors": manifest,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    prelude = MAGIC + np.uint32(_pack_version(FORMAT_MAJOR, FORMAT_MINOR)).tobytes()
    prelude += np.uint64(len(header_bytes)).tobytes()
    payload_start = len(prelude) + len(header_bytes)
    pad = (-payload_start) % 16
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(prelude)
        fh.write(header_bytes)
        fh.write(b"\x00" * pad)
        for blob in blobs:
            fh.write(blob)


def read_header(path) -> dict:
    """Parse and validate the file header; returns it with ``payload_start`` added."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise TruncatedPayloadError(f"{path}: file shorter than the fixed prelude")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    major, minor = _unpack_version(version)
    if major != FORMAT_MAJOR or minor > FORMAT_MINOR:
        raise UnsupportedVersionError(
            f"{path}: format version {major}.{minor} not supported "
            f"(current {FORMAT_MAJOR}.{FORMAT_MINOR})"
        )
    header_len = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    if 16 + header_len > len(raw):
        raise TruncatedPayloadError(f"{path}: header length {header_len} exceeds file size")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightFileError(f"{path}: unreadable header: {e}") from e
    payload_start = 16 + header_len + ((-(16 + header_len)) % 16)
    header["payload_start"] = payload_start
    header["file_size"] = len(raw)
    _validate_manifest(header, path)
    return header


def _validate_manifest(header: dict, path) -> None:
    manifest = header.get("tensors")
    if not isinstance(manifest, list):
        raise ManifestError(f"{path}: header lacks a tensor manifest")
    expected = 0
    for entry in manifest:
        size = 4 * int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 4
        if entry["offset"] != expected:
            raise ManifestError(
                f"{path}: tensor {entry['name']!r} at offset {entry['offset']}, "
                f"expected {expected} (offsets must be contiguous and increasing)"
            )
        expected += size
    payload_size = header["file_size"] - header["payload_start"]
    if payload_size != expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {payload_size} bytes, manifest declares {expected}"
        )


def load_weights(path) -> zoo.ModelGraph:
    """Rebuild the model graph stored at ``path``; bit-exact with save_weights."""
    header = read_header(path)
    raw = Path(path).read_bytes()
    spec = zoo.spec_from_dict(header["model"])
    graph = zoo.build(spec, mode=header["mode"], seed=0)
    owners = zoo.param_owners(graph)
    manifest = {entry["name"]: entry for entry in header["tensors"]}
    # a freshly built graph carries biases everywhere; a file saved after bias
    # stripping simply omits them
    for name in set(owners) - set(manifest):
        obj, attr = owners[name]
        if attr == "bias":
            obj.bias = None
        else:
            raise ManifestError(f"{path}: manifest is missing tensor {name!r}")
    owners = zoo.param_owners(graph)
    extra = sorted(set(manifest) - set(owners))
    if extra:
        raise ManifestError(f"{path}: manifest holds tensors unknown to the spec: {extra[:4]}")
    start = header["payload_start"]
    for name, (obj, attr) in owners.items():
        arr = getattr(obj, attr)
        entry = manifest[name]
        if list(arr.shape) != list(entry["shape"]):
            raise ManifestError(
                f"{path}: tensor {name!r} has shape {entry['shape']}, model expects {list(arr.shape)}"
            )
        lo = start + entry["offset"]
        hi = lo + 4 * arr.size
        arr[...] = np.frombuffer(raw[lo:hi], dtype="<f4").reshape(arr.shape)
    return graph

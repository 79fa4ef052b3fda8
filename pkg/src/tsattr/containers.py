"""Self-describing binary container used by the .tsr, .atr and checkpoint files.

Byte layout (all integers little-endian):

    magic      4 bytes, file-type tag
    header_len uint32
    header     UTF-8 JSON, canonical form (sorted keys, no whitespace)
    payload    blocks in the order listed under header["blocks"]

Each block entry is ``{"name": str, "kind": "f8"|"bits", "shape": [...]}``.
``f8`` blocks are row-major float64; ``bits`` blocks are booleans packed with
numpy's big-endian bit order. The canonical header plus raw float64 payloads
make writes byte-identical for identical inputs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import FormatError

_HEADER_LEN = struct.Struct("<I")


def _canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(
    path: str | Path,
    magic: bytes,
    meta: Mapping[str, Any],
    arrays: Mapping[str, np.ndarray],
) -> None:
    """Write ``arrays`` (float64 or bool) with ``meta`` under the given magic.

    Array insertion order defines the payload order and is recorded in the
    header, so the file is self-describing.
    """
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    blocks = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.bool_:
            kind = "bits"
            payloads.append(np.packbits(arr.reshape(-1)).tobytes())
        else:
            kind = "f8"
            payloads.append(arr.astype("<f8", copy=False).tobytes())
        blocks.append({"name": name, "kind": kind, "shape": list(arr.shape)})
    header = _canonical_json({"meta": dict(meta), "blocks": blocks})
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_HEADER_LEN.pack(len(header)))
        fh.write(header)
        for chunk in payloads:
            fh.write(chunk)


def read_container(
    path: str | Path, magic: bytes
) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Read a container written by :func:`write_container`.

    Raises FormatError on a wrong magic, truncated file or undecodable header.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read container: {exc}") from exc
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated container (only {len(raw)} bytes)")
    if raw[:4] != magic:
        raise FormatError(
            f"{path}: bad magic {raw[:4]!r}, expected {magic!r}"
        )
    (header_len,) = _HEADER_LEN.unpack_from(raw, 4)
    header_end = 8 + header_len
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8:header_end].decode("utf-8"))
        blocks = header["blocks"]
        meta = header["meta"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: undecodable header: {exc}") from exc

    arrays: dict[str, np.ndarray] = {}
    offset = header_end
    for block in blocks:
        shape = tuple(int(s) for s in block["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if block["kind"] == "f8":
            nbytes = 8 * count
            if len(raw) < offset + nbytes:
                raise FormatError(f"{path}: truncated payload for {block['name']!r}")
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
            arrays[block["name"]] = arr.reshape(shape).astype(np.float64)
            offset += nbytes
        elif block["kind"] == "bits":
            nbytes = (count + 7) // 8
            if len(raw) < offset + nbytes:
                raise FormatError(f"{path}: truncated payload for {block['name']!r}")
            packed = np.frombuffer(raw, dtype=np.uint8, count=nbytes, offset=offset)
            bits = np.unpackbits(packed, count=count).astype(bool)
            arrays[block["name"]] = bits.reshape(shape)
            offset += nbytes
        else:
            raise FormatError(f"{path}: unknown block kind {block['kind']!r}")
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return meta, arrays

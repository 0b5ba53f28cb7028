"""Single-file checkpoint container: JSON manifest plus raw little-endian arrays.

Layout::

    8 bytes   magic b"CSEGCKP1"
    8 bytes   little-endian uint64 manifest length in bytes
    N bytes   UTF-8 JSON manifest
    ...       raw array payloads, C-order, little-endian, at the offsets
              recorded in the manifest (relative to the end of the manifest)

The manifest carries arbitrary metadata under "meta" plus an "arrays" list of
{name, shape, dtype, offset, nbytes} entries, so a checkpoint is
self-describing without loading any payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CSEGCKP1"


class CheckpointError(RuntimeError):
    pass


def _le_dtype(dtype: np.dtype) -> np.dtype:
    return dtype.newbyteorder("<") if dtype.byteorder == ">" else dtype


def write_container(path: Path | str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    payloads = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(_le_dtype(arr.dtype), copy=False)
        blob = arr.tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.str,
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        payloads.append(blob)
        offset += len(blob)
    manifest = json.dumps({"meta": meta, "arrays": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for blob in payloads:
            f.write(blob)


def read_manifest(path: Path | str) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint file not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"'{path}' is not a checkpoint file (bad magic {magic!r})")
        (length,) = struct.unpack("<Q", f.read(8))
        raw = f.read(length)
        if len(raw) != length:
            raise CheckpointError(f"checkpoint '{path}' truncated inside manifest")
        try:
            return json.loads(raw.decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"checkpoint '{path}' has a corrupt manifest: {exc}") from exc


def read_container(path: Path | str) -> tuple[dict, dict[str, np.ndarray]]:
    manifest = read_manifest(path)
    with open(path, "rb") as f:
        f.seek(8)
        (length,) = struct.unpack("<Q", f.read(8))
        header_len = 16 + length
        f.seek(0, 2)
        total = f.tell()
        arrays: dict[str, np.ndarray] = {}
        for entry in manifest["arrays"]:
            start = header_len + entry["offset"]
            if start + entry["nbytes"] > total:
                raise CheckpointError(
                    f"checkpoint '{path}' truncated: array '{entry['name']}' "
                    f"needs bytes up to {start + entry['nbytes']}, file has {total}"
                )
            f.seek(start)
            blob = f.read(entry["nbytes"])
            arr = np.frombuffer(blob, dtype=np.dtype(entry["dtype"]))
            arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return manifest["meta"], arrays


def diff_array_sets(expected: dict[str, tuple], found: dict[str, np.ndarray]) -> list[str]:
    """Human-readable mismatches between expected {name: shape} and loaded arrays."""
    problems = []
    for name, shape in sorted(expected.items()):
        if name not in found:
            problems.append(f"missing array '{name}' (expected shape {tuple(shape)})")
        elif tuple(found[name].shape) != tuple(shape):
            problems.append(
                f"shape mismatch for '{name}': checkpoint has {tuple(found[name].shape)}, "
                f"model expects {tuple(shape)}"
            )
    for name in sorted(found):
        if name not in expected:
            problems.append(f"unexpected array '{name}' in checkpoint")
    return problems

"""Self-describing parameter container with a sidecar manifest.

Layout: 8-byte magic, little-endian uint32 header length, a UTF-8 JSON
header, then every parameter's values row-major little-endian in header
order, then any named text sections (UTF-8). The header carries the
format version, parameter names/shapes/dtypes, text-section names and
byte lengths, and free-form metadata. The sidecar manifest (same path
plus ".manifest.txt") lists the parameters and a sha256 of the
container so a reader can verify integrity without parsing it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .tensor import Tensor, parameter

MAGIC = b"SPKERN01"
FORMAT_VERSION = 1

_DTYPES = {"float64": "<f8", "float32": "<f4"}


def save_checkpoint(
    path,
    params: Dict[str, Tensor],
    meta: Optional[dict] = None,
    sections: Optional[Dict[str, str]] = None,
) -> None:
    path = Path(path)
    names = sorted(params)
    sections = sections or {}
    section_bytes = {name: text.encode("utf-8") for name, text in sections.items()}
    header = {
        "format_version": FORMAT_VERSION,
        "params": [
            {
                "name": name,
                "shape": list(params[name].shape),
                "dtype": str(params[name].dtype),
            }
            for name in names
        ],
        "sections": [
            {"name": name, "bytes": len(blob)} for name, blob in sorted(section_bytes.items())
        ],
        "meta": meta or {},
    }
    for entry in header["params"]:
        if entry["dtype"] not in _DTYPES:
            raise ValueError(f"unsupported dtype {entry['dtype']} for {entry['name']}")
    header_blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_blob)))
        fh.write(header_blob)
        for name in names:
            arr = np.ascontiguousarray(params[name].data, dtype=_DTYPES[str(params[name].dtype)])
            fh.write(arr.tobytes())
        for name, blob in sorted(section_bytes.items()):
            fh.write(blob)
    _write_manifest(path, header)


def load_checkpoint(path) -> Tuple[Dict[str, Tensor], dict, Dict[str, str]]:
    """Returns (trainable params, meta, text sections)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a parameter container (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header["format_version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported container version {header['format_version']}")
        params: Dict[str, Tensor] = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            dtype = _DTYPES[entry["dtype"]]
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * np.dtype(dtype).itemsize)
            arr = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(entry["dtype"])
            params[entry["name"]] = parameter(arr)
        sections: Dict[str, str] = {}
        for entry in header.get("sections", []):
            sections[entry["name"]] = fh.read(entry["bytes"]).decode("utf-8")
    return params, header.get("meta", {}), sections


def checkpoint_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(path: Path, header: dict) -> None:
    lines = [f"container: {path.name}", f"format_version: {header['format_version']}"]
    for entry in header["params"]:
        shape = "x".join(str(s) for s in entry["shape"]) or "scalar"
        lines.append(f"param: {entry['name']} shape={shape} dtype={entry['dtype']}")
    for entry in header.get("sections", []):
        lines.append(f"section: {entry['name']} bytes={entry['bytes']}")
    lines.append(f"sha256: {checkpoint_sha256(path)}")
    manifest_path = path.with_name(path.name + ".manifest.txt")
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def verify_manifest(path) -> bool:
    """True if the sidecar manifest's checksum matches the container."""
    path = Path(path)
    manifest_path = path.with_name(path.name + ".manifest.txt")
    recorded = None
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        if line.startswith("sha256: "):
            recorded = line.split(": ", 1)[1].strip()
    return recorded == checkpoint_sha256(path)

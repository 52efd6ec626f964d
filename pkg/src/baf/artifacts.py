"""Versioned binary containers, content hashing, and run manifests.

All persisted models share one framing: an ASCII magic line, an 8-byte
little-endian header length, a JSON header, and a raw payload. Writers are
deterministic (sorted JSON keys, no timestamps) so reruns with identical
inputs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError


def write_container(path, magic: str, header: dict, payload: bytes = b"") -> None:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = magic.encode("ascii") + b"\n" + struct.pack("<Q", len(head)) + head + payload
    Path(path).write_bytes(blob)


def read_container(path, magic: str) -> tuple[dict, bytes]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path}: missing magic line")
    found = raw[:newline].decode("ascii", errors="replace")
    if found != magic:
        raise FormatError(f"{path}: unknown artifact version (found {found!r}, expected {magic})")
    body = raw[newline + 1:]
    if len(body) < 8:
        raise FormatError(f"{path}: truncated container")
    (hlen,) = struct.unpack("<Q", body[:8])
    if len(body) < 8 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(body[8:8 + hlen].decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc
    return header, body[8 + hlen:]


def floats_to_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def floats_from_bytes(payload: bytes, shape, offset: int = 0) -> tuple[np.ndarray, int]:
    count = int(np.prod(shape)) if shape else 1
    nbytes = count * 8
    if offset + nbytes > len(payload):
        raise FormatError("truncated float payload")
    arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
    return arr.astype(np.float64).reshape(shape), offset + nbytes


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def config_hash(config: dict) -> str:
    return sha256_text(json.dumps(config, sort_keys=True))


def write_run_manifest(path, command: str, cfg_hash: str, seed: int,
                       inputs: dict[str, str], outputs: dict[str, str]) -> None:
    doc = {
        "command": command,
        "config_hash": cfg_hash,
        "seed": seed,
        "inputs": dict(sorted(inputs.items())),
        "outputs": dict(sorted(outputs.items())),
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_run_manifest(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no run manifest at {path}; run the upstream stage first")
    return json.loads(path.read_text())

"""Versioned single-file checkpoint container.

Layout: an 8-byte magic, an 8-byte little-endian header length, a
canonical-JSON header, then the raw tensor blobs. The header carries the
format version, training counters, the embedded build config with its
digest, and one record per blob (name, dtype, shape, offset, sha256).
Canonical JSON plus fixed blob ordering makes save(load(save(x)))
byte-identical, and every tensor round-trips bitwise.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

MAGIC = b"URDEHZCK"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class ConfigHashMismatchError(CheckpointError):
    pass


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config_dict):
    return hashlib.sha256(canonical_json(config_dict).encode()).hexdigest()


def save_checkpoint(path, meta, sections):
    """Write a checkpoint.

    meta: JSON-serializable dict; must contain a "config" entry, whose
    digest is stored alongside it. sections: dict name -> numpy array.
    """
    if "config" not in meta:
        raise ValueError("checkpoint meta must carry a 'config' entry")
    meta = dict(meta)
    meta["format_version"] = FORMAT_VERSION
    meta["config_hash"] = config_hash(meta["config"])

    names = sorted(sections)
    blobs = []
    records = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(sections[name])
        raw = arr.tobytes()
        records.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = canonical_json({"meta": meta, "sections": records}).encode()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for raw in blobs:
            f.write(raw)
    return path


def load_checkpoint(path, expected_config=None):
    """Read a checkpoint back as (meta, sections).

    Validates the magic, format version, per-blob digests and the stored
    config digest. When expected_config is given, its digest must match
    the stored one.
    """
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8:
        raise CheckpointTruncatedError(f"{path}: file shorter than the fixed preamble")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointIntegrityError(f"{path}: bad magic; not a checkpoint file")
    hlen = int.from_bytes(data[len(MAGIC) : len(MAGIC) + 8], "little")
    hstart = len(MAGIC) + 8
    if len(data) < hstart + hlen:
        raise CheckpointTruncatedError(f"{path}: truncated header")
    try:
        header = json.loads(data[hstart : hstart + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointIntegrityError(f"{path}: corrupt header ({exc})") from exc
    meta = header["meta"]
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {meta.get('format_version')} unsupported "
            f"(expected {FORMAT_VERSION})"
        )
    if config_hash(meta["config"]) != meta["config_hash"]:
        raise ConfigHashMismatchError(f"{path}: stored config does not match its digest")
    if expected_config is not None and config_hash(expected_config) != meta["config_hash"]:
        raise ConfigHashMismatchError(
            f"{path}: checkpoint was produced under a different configuration "
            f"(stored hash {meta['config_hash'][:12]}..., "
            f"expected {config_hash(expected_config)[:12]}...)"
        )

    body = hstart + hlen
    sections = {}
    for rec in header["sections"]:
        start = body + rec["offset"]
        end = start + rec["nbytes"]
        if end > len(data):
            raise CheckpointTruncatedError(f"{path}: blob {rec['name']} extends past end of file")
        raw = data[start:end]
        if hashlib.sha256(raw).hexdigest() != rec["sha256"]:
            raise CheckpointIntegrityError(f"{path}: blob {rec['name']} failed its digest check")
        sections[rec["name"]] = np.frombuffer(raw, dtype=np.dtype(rec["dtype"])).reshape(
            rec["shape"]
        ).copy()
    return meta, sections

"""Binary checkpoint container for full system state.

Layout:  8-byte magic, little-endian uint64 header length, canonical JSON
header (sorted keys, no whitespace), then the raw arena payload as
little-endian float64 runs at the offsets the header declares. The header
embeds the full config (and the synthetic-data spec when training used
one), so a checkpoint alone rebuilds the system. Identical state always
serializes to identical bytes, which is what the determinism checks hash.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PvmConfig, SyntheticSpec, config_to_dict, parse_config, topology_for
from .errors import CheckpointError

MAGIC = b"PVMCKPT1"
FORMAT_VERSION = 1


@dataclass
class CheckpointData:
    config: PvmConfig
    synthetic: SyntheticSpec | None
    step: int
    arrays: dict[str, np.ndarray]


def save_checkpoint(system, path: str | Path,
                    synthetic: SyntheticSpec | None = None) -> Path:
    """Serialize a System between steps. Returns the written path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = system.checkpoint_arrays()
    index = []
    offset = 0
    for name, arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"array {name!r} contains non-finite values")
        index.append({"name": name, "offset": offset, "length": int(arr.size)})
        offset += arr.size * 8
    header = {
        "format_version": FORMAT_VERSION,
        "step": int(system.step_index),
        "config": config_to_dict(system.config, synthetic),
        "arrays": index,
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for _, arr in arrays:
            f.write(arr.astype("<f8", copy=False).tobytes())
    return path


def read_checkpoint(path: str | Path) -> CheckpointData:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (header_len,) = struct.unpack_from("<Q", blob, len(MAGIC))
    header_start = len(MAGIC) + 8
    if header_start + header_len > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[header_start:header_start + header_len])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt header JSON: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {header.get('format_version')}")

    config_dict = dict(header["config"])
    synthetic_dict = config_dict.pop("synthetic", None)
    try:
        config, synthetic = parse_config(json.dumps(
            {**config_dict, "synthetic": synthetic_dict}))
    except Exception as e:
        raise CheckpointError(f"{path}: embedded config is invalid: {e}") from e

    payload_start = header_start + header_len
    arrays = {}
    for entry in header["arrays"]:
        begin = payload_start + entry["offset"]
        end = begin + entry["length"] * 8
        if end > len(blob):
            raise CheckpointError(
                f"{path}: truncated payload for array {entry['name']!r}")
        arr = np.frombuffer(blob[begin:end], dtype="<f8").copy()
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(
                f"{path}: array {entry['name']!r} contains non-finite values")
        arrays[entry["name"]] = arr
    return CheckpointData(config=config, synthetic=synthetic,
                          step=int(header["step"]), arrays=arrays)


def restore_system(data: CheckpointData):
    """Rebuild a System in the exact saved state."""
    from .executor import System

    topo = topology_for(data.config)
    system = System(data.config, topo)
    expected = dict(system.checkpoint_arrays())
    if set(expected) != set(data.arrays):
        raise CheckpointError(
            f"array set mismatch: checkpoint has {sorted(data.arrays)}, "
            f"config implies {sorted(expected)}")
    for name, view in expected.items():
        src = data.arrays[name]
        if src.size != view.size:
            raise CheckpointError(
                f"array {name!r} length {src.size} does not match config-implied "
                f"{view.size}")
        view[:] = src
    system._rewrap_units()
    system.step_index = data.step
    return system


def load_system(path: str | Path):
    """Convenience: read + restore. Returns (system, synthetic_spec)."""
    data = read_checkpoint(path)
    return restore_system(data), data.synthetic


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def verify_checkpoint(path: str | Path) -> dict:
    """Integrity summary for inspection tooling."""
    data = read_checkpoint(path)
    return {
        "path": str(path),
        "sha256": file_sha256(path),
        "step": data.step,
        "config_name": data.config.name,
        "frame_size": [data.config.frame_width, data.config.frame_height],
        "layers": [list(g) for g in data.config.layer_grids],
        "hidden_size": data.config.hidden_size,
        "synthetic": data.synthetic.kind if data.synthetic else None,
        "arrays": {name: int(arr.size) for name, arr in data.arrays.items()},
        "total_parameters": int(data.arrays["weights"].size),
        "finite": True,
    }

"""Checkpoint directories: manifest.json plus one TSR file per parameter."""

import hashlib
import json
import os

from .errors import CheckpointError, TsrError
from .tsr import read_tsr, write_tsr


def save_checkpoint(path, kind, config, named_arrays):
    """named_arrays: ordered (name, ndarray) pairs; order is preserved in the manifest."""
    os.makedirs(path, exist_ok=True)
    names = [n for n, _ in named_arrays]
    if len(set(names)) != len(names):
        raise CheckpointError(f"duplicate parameter names in checkpoint: {path}")
    manifest = {"kind": kind, "config": config, "params": names}
    for name, arr in named_arrays:
        write_tsr(arr, os.path.join(path, name + ".tsr"))
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def load_checkpoint(path, kind):
    """Returns (config dict, {name: ndarray}); validates kind and file presence."""
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise CheckpointError(f"no manifest.json under {path}")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except (json.JSONDecodeError, OSError) as e:
        raise CheckpointError(f"unreadable manifest {manifest_path}: {e}") from e
    for key in ("kind", "config", "params"):
        if key not in manifest:
            raise CheckpointError(f"manifest {manifest_path} missing key {key!r}")
    if manifest["kind"] != kind:
        raise CheckpointError(
            f"checkpoint {path} holds a {manifest['kind']!r}, expected {kind!r}"
        )
    arrays = {}
    for name in manifest["params"]:
        tsr_path = os.path.join(path, name + ".tsr")
        try:
            arrays[name] = read_tsr(tsr_path)
        except (TsrError, OSError) as e:
            raise CheckpointError(f"cannot read parameter {name!r} from {path}: {e}") from e
    return manifest["config"], arrays


def params_digest(named_arrays):
    """SHA-256 over names and raw bytes; order-sensitive, for frozen-weight contracts."""
    h = hashlib.sha256()
    for name, arr in named_arrays:
        h.update(name.encode())
        h.update(b"\x00")
        h.update(arr.tobytes())
    return h.hexdigest()

"""Checkpoint archives: zip files holding JSON metadata plus torch blobs.

Layout of every stage checkpoint:

    meta.json    -- small JSON dict, readable without touching the blobs
    state.pt     -- torch.save payload (parameter / optimizer state dicts)

Archives are written with fixed zip timestamps so that identical contents give
byte-identical files.  Parameter hashes are computed over raw tensor bytes in
sorted key order, independent of the serialization container.
"""

from __future__ import annotations

import hashlib
import io
import json
import subprocess
import zipfile
from pathlib import Path
from typing import Any, Mapping

import torch

_META_NAME = "meta.json"
_STATE_NAME = "state.pt"
# Fixed DOS timestamp (1980-01-01) keeps archive bytes deterministic.
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class CheckpointError(RuntimeError):
    """Raised for unreadable, truncated or incompatible checkpoints."""


def code_version() -> str:
    """git-describe of the working tree, or the package version as fallback."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except OSError:
        pass
    from stagegan import __version__
    return __version__


def hash_state_dict(state: Mapping[str, torch.Tensor]) -> str:
    """sha256 over tensor bytes + shapes + dtypes, sorted by key."""
    h = hashlib.sha256()
    for key in sorted(state.keys()):
        t = state[key]
        if not isinstance(t, torch.Tensor):
            h.update(f"{key}|{t!r}".encode())
            continue
        t = t.detach().cpu().contiguous()
        h.update(key.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def hash_many(states: Mapping[str, Mapping[str, torch.Tensor]]) -> str:
    """Combined hash over several named state dicts."""
    h = hashlib.sha256()
    for name in sorted(states.keys()):
        h.update(name.encode())
        h.update(hash_state_dict(states[name]).encode())
    return h.hexdigest()


def save_archive(path: str | Path, meta: dict[str, Any], payload: dict[str, Any]) -> None:
    """Write meta + torch payload as a deterministic zip archive.

    The file is written atomically (tmp + rename) so a crash never leaves a
    truncated checkpoint at the target path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(payload, buf)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        meta_info = zipfile.ZipInfo(_META_NAME, date_time=_ZIP_DATE)
        zf.writestr(meta_info, json.dumps(meta, indent=2, sort_keys=True))
        state_info = zipfile.ZipInfo(_STATE_NAME, date_time=_ZIP_DATE)
        zf.writestr(state_info, buf.getvalue())
    tmp.replace(path)


def read_meta(path: str | Path) -> dict[str, Any]:
    """Read only the JSON metadata; parameter blobs are not deserialized."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            with zf.open(_META_NAME) as f:
                return json.load(f)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc


def load_archive(path: str | Path) -> tuple[dict[str, Any], dict[str, Any]]:
    """Read (meta, payload) from an archive, failing loudly on corruption."""
    path = Path(path)
    meta = read_meta(path)
    try:
        with zipfile.ZipFile(path) as zf:
            with zf.open(_STATE_NAME) as f:
                payload = torch.load(io.BytesIO(f.read()), weights_only=False)
    except (zipfile.BadZipFile, KeyError, OSError, RuntimeError, EOFError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    return meta, payload


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

"""Model artifact layout, JSON documents and training manifests.

Artifacts live under ``<root>/<method>/<scope>/<valid_date>/<pool>.json``;
``scope`` is a station id or ``regional``. Documents are written with
sorted keys so identical runs give identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional

from common.config import get_settings
from common.errors import ConfigError, MissingArtifactError
from common.logging import log_event

MANIFEST_NAME = "manifest.json"


def artifact_path(root: str | Path, method: str, scope: str, valid_date: str, pool: str) -> Path:
    return Path(root) / method / scope / valid_date / f"{pool}.json"


def dumps(document: Mapping[str, Any]) -> str:
    return json.dumps(document, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path: str | Path, document: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(document), encoding="utf-8")
    return path


def read_json(path: str | Path) -> Dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"artifact {path} is not valid JSON: {exc}") from exc


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class ModelStore:
    """Read access to the artifacts of one method; documents are cached."""

    def __init__(self, root: str | Path, method: str) -> None:
        self.root = Path(root)
        self.method = method
        self._load = lru_cache(maxsize=None)(self._read)

    def path(self, scope: str, valid_date: str, pool: str) -> Path:
        return artifact_path(self.root, self.method, scope, valid_date, pool)

    def _read(self, scope: str, valid_date: str, pool: str) -> Dict[str, Any]:
        path = self.path(scope, valid_date, pool)
        if not path.is_file():
            raise MissingArtifactError(
                f"no {self.method} model for {valid_date}, pool {pool}, scope {scope} (expected {path})"
            )
        return read_json(path)

    def load(self, scope: str, valid_date: str, pool: str) -> Dict[str, Any]:
        return self._load(scope, valid_date, pool)

    def manifest(self) -> Optional[Dict[str, Any]]:
        path = self.root / self.method / MANIFEST_NAME
        return read_json(path) if path.is_file() else None


def write_manifest(
    root: str | Path,
    method: str,
    *,
    config_hash: str,
    seed: int,
    variable: str,
    artifacts: Iterable[Path],
    valid_dates: Iterable[str],
    skipped: Mapping[str, str],
) -> Dict[str, Any]:
    """List every artifact of a training run with its digest and the config hash."""

    root = Path(root)
    entries = [
        {
            "path": Path(p).relative_to(root).as_posix(),
            "sha256": file_sha256(p),
            "config_hash": config_hash,
        }
        for p in sorted(artifacts)
    ]
    manifest = {
        "method": method,
        "variable": variable,
        "config_hash": config_hash,
        "seed": int(seed),
        "git_sha": get_settings().git_sha,
        "valid_dates": sorted(valid_dates),
        "skipped": dict(sorted(skipped.items())),
        "artifacts": entries,
    }
    write_json(root / method / MANIFEST_NAME, manifest)
    log_event(
        "TRAIN_MANIFEST",
        method=method,
        config_hash=config_hash,
        artifacts=len(entries),
        valid_dates=len(manifest["valid_dates"]),
        skipped=len(manifest["skipped"]),
    )
    return manifest


__all__ = [
    "MANIFEST_NAME",
    "artifact_path",
    "dumps",
    "write_json",
    "read_json",
    "file_sha256",
    "ModelStore",
    "write_manifest",
]

"""
Run Manifest Module

Records how every CLI output was produced so it can be replayed bit for bit.

A manifest holds the command name, the fully resolved configuration (every
default materialized), the master seed, SHA-256 digests of the inputs, the
artifact version and the SHA-256 of the primary output bytes.

Key Patterns:
1. Repository: ManifestStore owns every filesystem detail (paths, JSON layout)
2. Lazy singleton: get_store() builds the store on first use from MARGIN_MANIFEST_DIR
3. Facade functions: save_manifest()/load_manifest() for callers that just need the default store

Storage layout:
    --out results.csv          -> results.csv.manifest.json (next to the output)
    stdout output (no --out)   -> $MARGIN_MANIFEST_DIR/<command>-<first 12 hex of output digest>.json
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from margin_config import ARTIFACT_VERSION, get_manifest_dir
from reporting import console, to_jsonable

MANIFEST_SUFFIX = ".manifest.json"


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_text(text: str) -> str:
    return digest_bytes(text.encode("utf-8"))


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    master_seed: int
    input_digests: Dict[str, str] = field(default_factory=dict)
    version: str = ARTIFACT_VERSION
    output_digest: str = ""

    def to_json(self) -> str:
        return json.dumps(to_jsonable(asdict(self)), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        """
        Parse a manifest written by to_json.

        Raises:
            ValueError: not JSON, or a required field is missing
        """
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValueError(f"manifest is not valid JSON: {e}")
        missing = [key for key in ("command", "config", "master_seed") if key not in data]
        if missing:
            raise ValueError(f"manifest is missing {missing}")
        return cls(
            command=data["command"],
            config=dict(data["config"]),
            master_seed=int(data["master_seed"]),
            input_digests=dict(data.get("input_digests", {})),
            version=data.get("version", ARTIFACT_VERSION),
            output_digest=data.get("output_digest", ""),
        )


class ManifestStore:
    """
    Reads and writes manifests on the local filesystem.

    Pattern: Repository Pattern
    - Callers never build manifest paths themselves
    - The directory is created on first write, not on construction
    """

    def __init__(self, directory: Union[str, Path, None] = None):
        self.directory = Path(directory if directory is not None else get_manifest_dir())

    def default_path(self, manifest: RunManifest, out: Optional[Union[str, Path]] = None) -> Path:
        if out is not None:
            out = Path(out)
            return out.with_name(out.name + MANIFEST_SUFFIX)
        stem = manifest.output_digest[:12] or "pending"
        return self.directory / f"{manifest.command}-{stem}.json"

    def save(self, manifest: RunManifest, path: Optional[Union[str, Path]] = None,
             out: Optional[Union[str, Path]] = None) -> Path:
        target = Path(path) if path is not None else self.default_path(manifest, out)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(manifest.to_json(), encoding="utf-8")
        console.print(f"💾 Saved run manifest: {target}")
        return target

    def load(self, path: Union[str, Path]) -> RunManifest:
        return RunManifest.from_json(Path(path).read_text(encoding="utf-8"))

    def list_manifests(self) -> List[Path]:
        if not self.directory.is_dir():
            return []
        return sorted(self.directory.glob("*.json"))


# ---------------------------------------------------------------------------
# Singleton + facade
# ---------------------------------------------------------------------------

_store_instance: Optional[ManifestStore] = None


def get_store() -> ManifestStore:
    """Default store, built on first use from MARGIN_MANIFEST_DIR."""
    global _store_instance
    if _store_instance is None:
        _store_instance = ManifestStore()
    return _store_instance


def save_manifest(manifest: RunManifest, path: Optional[Union[str, Path]] = None,
                  out: Optional[Union[str, Path]] = None) -> Path:
    return get_store().save(manifest, path=path, out=out)


def load_manifest(path: Union[str, Path]) -> RunManifest:
    return get_store().load(path)

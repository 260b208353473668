"""One ``manifest.json`` per artifact directory: config hashes, seeds, file hashes, timings."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__

MANIFEST = "manifest.json"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def sha256_json(obj) -> str:
    return sha256_bytes(json.dumps(obj, sort_keys=True).encode())


@dataclass
class RunManifest:
    stage: str
    config_hashes: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)  # relative path -> sha256
    wall_seconds: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    tool_version: str = __version__

    def add_files(self, root, paths) -> None:
        root = Path(root)
        for p in paths:
            p = Path(p)
            self.artifacts[p.relative_to(root).as_posix()] = sha256_file(p)

    def write(self, root) -> Path:
        path = Path(root) / MANIFEST
        body = asdict(self)
        body["artifacts"] = dict(sorted(self.artifacts.items()))
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, root) -> "RunManifest":
        return cls(**json.loads((Path(root) / MANIFEST).read_text()))

    def content_hash(self) -> str:
        """Hash of everything except wall-clock timings."""
        body = asdict(self)
        body.pop("wall_seconds")
        return sha256_json(body)


def verify(root) -> list[str]:
    """Relative paths whose current hash differs from the manifest."""
    m = RunManifest.read(root)
    bad = []
    for rel, digest in m.artifacts.items():
        p = Path(root) / rel
        if not p.exists() or sha256_file(p) != digest:
            bad.append(rel)
    return bad

# momrev/run_ledger.py
from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from . import __version__
from .artifact_store import ArtifactStore
from .errors import ConfigError

__all__ = ["MANIFEST_NAME", "RunLedger", "RunManifest", "load_manifest"]

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seed: int
    code_version: str = __version__
    outputs: List[str] = field(default_factory=list)
    duration_s: Optional[float] = None
    status: str = "running"
    error: Optional[str] = None


def load_manifest(path: str) -> RunManifest:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        return RunManifest(**raw)
    except (OSError, ValueError, TypeError) as e:
        raise ConfigError(f"cannot read manifest {path}: {e}") from e


class RunLedger:
    """
    Append-only JSONL log of run events (started / finished / failed).
    Also owns the lifecycle of the run's manifest.json.
    """

    def __init__(self, ledger_path: str) -> None:
        self.ledger_path = ledger_path
        os.makedirs(os.path.dirname(ledger_path) or ".", exist_ok=True)

    def write(self, entry: Dict[str, Any]) -> None:
        rec = {"ts": datetime.now(timezone.utc).isoformat(), **(entry or {})}
        with open(self.ledger_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")

    def start(self, store: ArtifactStore, manifest: RunManifest) -> float:
        store.save_json(MANIFEST_NAME, asdict(manifest), track=False)
        self.write({"event": "started", "command": manifest.command, "seed": manifest.seed})
        return time.monotonic()

    def finish(self, store: ArtifactStore, manifest: RunManifest, started: float,
               error: Optional[BaseException] = None) -> RunManifest:
        manifest.duration_s = round(time.monotonic() - started, 3)
        manifest.outputs = [os.path.relpath(p, store.base) for p in store.written]
        manifest.status = "failed" if error else "finished"
        manifest.error = None if error is None else f"{type(error).__name__}: {error}"
        store.save_json(MANIFEST_NAME, asdict(manifest), track=False)
        self.write({
            "event": manifest.status,
            "command": manifest.command,
            "duration_s": manifest.duration_s,
            "outputs": len(manifest.outputs),
            **({"error": manifest.error} if error else {}),
        })
        return manifest

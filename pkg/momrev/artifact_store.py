# momrev/artifact_store.py
from __future__ import annotations

import csv
import json
import os
from typing import Any, Iterable, List, Sequence

__all__ = [
    "ArtifactStore",
]


def _cell(value: Any) -> Any:
    # repr keeps every float bit, so re-runs give byte-identical files
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return _cell(value.item())
    return value


class ArtifactStore:
    """
    Writes run outputs (CSV / JSON / bytes) into one local folder and
    remembers every path it wrote, for the run manifest.
    """

    def __init__(self, base_path: str) -> None:
        self.base = os.path.abspath(base_path or "./artifacts")
        os.makedirs(self.base, exist_ok=True)
        self.written: List[str] = []

    # ---- helpers ----
    def _path(self, name: str) -> str:
        p = os.path.join(self.base, name)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    def _record(self, p: str) -> str:
        if p not in self.written:
            self.written.append(p)
        return p

    # ---- write APIs ----
    def save_json(self, name: str, obj: Any, *, indent: int = 2, track: bool = True) -> str:
        p = self._path(name)
        with open(p, "w", encoding="utf-8") as f:
            json.dump(obj, f, ensure_ascii=False, indent=indent, sort_keys=True)
        return self._record(p) if track else p

    def save_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        p = self._path(name)
        with open(p, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        return self._record(p)

    def save_bytes(self, name: str, data: bytes) -> str:
        p = self._path(name)
        with open(p, "wb") as f:
            f.write(data or b"")
        return self._record(p)

    # ---- read APIs ----
    def load_json(self, name: str) -> Any:
        with open(self._path(name), "r", encoding="utf-8") as f:
            return json.load(f)

    def load_csv(self, name: str) -> List[List[str]]:
        with open(self._path(name), "r", encoding="utf-8", newline="") as f:
            return list(csv.reader(f))

    def load_bytes(self, name: str) -> bytes:
        with open(self._path(name), "rb") as f:
            return f.read()

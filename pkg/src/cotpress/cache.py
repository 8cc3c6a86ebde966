"""Content-addressed on-disk store for backend completions.

Keys are the hash of (prompt, backend identity, decoding params); values hold
the raw completion plus enough metadata to verify the key on read, so a
digest collision can never serve a foreign completion. Writes are atomic and
idempotent, which makes the store safe for concurrent writers.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from pathlib import Path


def completion_key(prompt: str, identity: str, params_json: str) -> str:
    payload = "\x1f".join((prompt, identity, params_json))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class CompletionCache:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str, prompt: str, identity: str, params_json: str) -> str | None:
        """Return the cached completion, or None on miss or key mismatch."""
        path = self._path(key)
        record = None
        if path.exists():
            try:
                record = json.loads(path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                record = None
        if (
            record is not None
            and record.get("prompt") == prompt
            and record.get("identity") == identity
            and record.get("params") == params_json
        ):
            with self._lock:
                self.hits += 1
            return record["completion"]
        with self._lock:
            self.misses += 1
        return None

    def put(self, key: str, prompt: str, identity: str, params_json: str, completion: str) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        record = {
            "prompt": prompt,
            "identity": identity,
            "params": params_json,
            "completion": completion,
        }
        fd, temp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump(record, handle, ensure_ascii=False)
            os.replace(temp_name, path)
        finally:
            if os.path.exists(temp_name):
                os.unlink(temp_name)

    def stats(self) -> dict:
        with self._lock:
            return {"hits": self.hits, "misses": self.misses}

    def reset_stats(self) -> None:
        with self._lock:
            self.hits = 0
            self.misses = 0

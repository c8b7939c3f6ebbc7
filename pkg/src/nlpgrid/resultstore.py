"""Content-addressed result storage and the broker's result cache.

Results live under ``results/<digest-prefix>/<digest>`` with a JSON sidecar
(`.meta`) recording size, media type and hash algorithm, so caches are
self-describing.  Writes are atomic per digest (write-temp-then-rename).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import NotFound
from .registry import MetadataRecord, Registry

HASH_ALG = "sha256"


def content_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class ResultRef:
    digest: str
    size_bytes: int
    media_type: str
    path: str | None = None


class ContentStore:
    """Immutable blob store keyed by content digest."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _blob_path(self, digest: str) -> Path:
        return self.root / digest[:2] / digest

    def put(self, data: bytes, media_type: str) -> ResultRef:
        digest = content_digest(data)
        blob = self._blob_path(digest)
        if not blob.exists():
            blob.parent.mkdir(parents=True, exist_ok=True)
            tmp = blob.with_suffix(".tmp.%d" % os.getpid())
            tmp.write_bytes(data)
            os.replace(tmp, blob)
            blob.with_suffix(".meta").write_text(
                json.dumps(
                    {"size_bytes": len(data), "media_type": media_type, "hash": HASH_ALG},
                    sort_keys=True,
                )
                + "\n",
                encoding="utf-8",
            )
        return ResultRef(
            digest=digest, size_bytes=len(data), media_type=media_type, path=str(blob)
        )

    def get(self, digest: str) -> bytes:
        blob = self._blob_path(digest)
        if not blob.exists():
            raise NotFound(f"no stored result {digest}")
        return blob.read_bytes()


class ResultCache:
    """Cache-key to ResultRef map, optionally persisted and mirrored into a
    registry as discoverable `result` records."""

    def __init__(self, path=None, registry: Registry | None = None):
        self.path = Path(path) if path is not None else None
        self.registry = registry
        self._entries: dict[str, ResultRef] = {}
        if self.path is not None and self.path.exists():
            raw = json.loads(self.path.read_text(encoding="utf-8"))
            self._entries = {
                key: ResultRef(**value) for key, value in raw.items()
            }

    def _save(self) -> None:
        if self.path is None:
            return
        raw = {
            key: {
                "digest": ref.digest,
                "size_bytes": ref.size_bytes,
                "media_type": ref.media_type,
                "path": ref.path,
            }
            for key, ref in sorted(self._entries.items())
        }
        self.path.write_text(json.dumps(raw, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def lookup(self, key: str) -> ResultRef | None:
        return self._entries.get(key)

    def store(self, key: str, ref: ResultRef) -> None:
        """Upsert; last writer wins (equal keys imply equal results)."""
        already = key in self._entries
        self._entries[key] = ref
        self._save()
        if self.registry is not None and not already:
            self.registry.add_record(
                MetadataRecord(
                    record_id="",
                    resource_kind="result",
                    dc={
                        "identifier": (f"result:{key}",),
                        "title": (f"cached result {key[:12]}",),
                        "format": (ref.media_type,),
                        "relation": (ref.digest,),
                    },
                    extensions={"hash": HASH_ALG},
                    payload_ref=ref.path,
                )
            )

    def __len__(self) -> int:
        return len(self._entries)

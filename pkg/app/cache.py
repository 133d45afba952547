"""On-disk cache for canonical systems and eigenbases.

Entries are JSON files under ``<out>/cache``.  Floats are written with
their shortest round-trip representation, so a load reproduces every
array bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from pathlib import Path

from .eigensolver import EigenBasis
from .errors import CacheError
from .reduction import CanonicalSystem

logger = logging.getLogger(__name__)

CACHE_VERSION = "lab-cache/1"

_KINDS = {
    "canonical": CanonicalSystem,
    "basis": EigenBasis,
}


def cache_key(*parts) -> str:
    """sha256 over the canonical JSON of *parts* (spec dict, resolutions)."""
    text = json.dumps(parts, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def save(obj, path: str | Path) -> Path:
    """Write a CanonicalSystem or EigenBasis with a version stamp."""
    kind = next((k for k, cls in _KINDS.items() if isinstance(obj, cls)), None)
    if kind is None:
        raise CacheError(f"cannot cache a {type(obj).__name__}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = {"version": CACHE_VERSION, "kind": kind, "payload": obj.to_dict()}
    path.write_text(json.dumps(data, allow_nan=False), encoding="utf-8")
    return path


def load(path: str | Path, kind: str | None = None):
    """Read back what :func:`save` wrote.

    Raises:
        CacheError: unreadable or corrupted file (with byte offset),
                    version stamp mismatch, or unexpected kind.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CacheError(f"cannot read cache file {path}: {e}") from e
    try:
        data = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise CacheError(f"corrupted cache file {path}", offset=e.start) from e
    except json.JSONDecodeError as e:
        raise CacheError(f"corrupted cache file {path}: {e.msg}", offset=e.pos) from e

    if not isinstance(data, dict) or data.get("version") != CACHE_VERSION:
        found = data.get("version") if isinstance(data, dict) else None
        raise CacheError(f"cache version {found!r} in {path}, expected {CACHE_VERSION!r}")
    stored = data.get("kind")
    if stored not in _KINDS or (kind is not None and stored != kind):
        raise CacheError(f"cache file {path} holds {stored!r}, expected {kind!r}")
    try:
        return _KINDS[stored].from_dict(data["payload"])
    except (KeyError, TypeError, ValueError) as e:
        raise CacheError(f"cache payload in {path} is incomplete: {e}") from e


class ArtifactCache:
    """Keyed cache directory. Thread-safe; misses and bad entries are logged, not raised."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def path_for(self, kind: str, key: str) -> Path:
        return self.root / f"{kind}-{key}.json"

    def get(self, kind: str, key: str):
        path = self.path_for(kind, key)
        with self._lock:
            if not path.exists():
                logger.info("[cache] miss %s-%s", kind, key)
                return None
            try:
                obj = load(path, kind)
            except CacheError as e:
                logger.warning("[cache] ignoring %s: %s", path.name, e)
                return None
        logger.info("[cache] hit %s-%s", kind, key)
        return obj

    def put(self, kind: str, key: str, obj) -> Path:
        with self._lock:
            return save(obj, self.path_for(kind, key))

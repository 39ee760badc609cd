"""Canonical serialization and hashing shared by logs, ledger and payloads."""
from __future__ import annotations

import enum
import hashlib
import hmac
import json
from dataclasses import fields, is_dataclass
from datetime import date, datetime
from typing import Any


def to_plain(obj: Any) -> Any:
    """Convert dataclasses, enums, dates and containers into JSON-ready values."""
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, datetime):
        return obj.isoformat()
    if isinstance(obj, date):
        return obj.isoformat()
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(to_plain(v) for v in obj)
    return obj


def _default(obj: Any) -> Any:
    if isinstance(obj, (set, frozenset)):
        return sorted(to_plain(v) for v in obj)
    plain = to_plain(obj)
    if plain is obj:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    return plain


def canonical_json(obj: Any) -> str:
    # ASCII-only so bytes are identical on every platform.
    return json.dumps(
        obj,
        default=_default,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
        allow_nan=False,
    )


def canonical_bytes(obj: Any) -> bytes:
    return canonical_json(obj).encode("ascii")


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def digest(obj: Any) -> str:
    """Lowercase hex SHA-256 of the canonical serialization of ``obj``."""
    return sha256_hex(canonical_bytes(obj))


def keyed_digest(key: bytes, obj: Any) -> str:
    return hmac.new(key, canonical_bytes(obj), hashlib.sha256).hexdigest()

"""Small shared helpers: config hashing and key=value files."""

from __future__ import annotations

import hashlib
from pathlib import Path

__all__ = ["config_hash", "write_kv", "read_kv"]


def config_hash(mapping: dict) -> str:
    """Stable 16-hex-digit digest over a flat mapping."""
    lines = [f"{k}={mapping[k]}" for k in sorted(mapping)]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:16]


def write_kv(path, mapping: dict) -> None:
    """Write a mapping as ``key = value`` lines."""
    text = "".join(f"{k} = {mapping[k]}\n" for k in mapping)
    Path(path).write_text(text, encoding="utf-8")


def read_kv(path) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out

"""
Utility functions for nested config documents and output files.
"""

import hashlib
import re
from pathlib import Path
from typing import Any


def get_dotted(data: dict, key: str) -> Any:
    """Value at a dotted path such as ``physical.od``; KeyError when missing."""
    node: Any = data
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            raise KeyError(key)
        node = node[part]
    return node


def set_dotted(data: dict, key: str, value: Any) -> dict:
    """Set a dotted path in place, creating intermediate tables."""
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return data


def normalize_column_name(name: str) -> str:
    """``physical.od`` → ``physical_od`` for CSV headers."""
    name = name.strip()
    name = re.sub(r"[.\s\-]+", "_", name)      # separators → underscore
    return re.sub(r"[^A-Za-z0-9_]", "", name)


def sha256_file(path: Path, chunk_size: int = 1 << 16) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()

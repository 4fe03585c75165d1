"""JSON / TOML config loading."""

from __future__ import annotations

import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def parse_config_text(text: str, suffix: str = ".json") -> dict:
    """Parse ``text`` as TOML when ``suffix`` is ``.toml``, else as JSON."""
    if suffix.lower() == ".toml":
        return tomllib.loads(text)
    return json.loads(text)

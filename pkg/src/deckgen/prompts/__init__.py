"""Prompt assets, loaded as package data.

Templates use string.Template ($var) substitution. The filled text goes
into the request digest, so any wording change naturally invalidates
recorded cassette entries.
"""

from __future__ import annotations

import string
from importlib import resources

_cache: dict[str, string.Template] = {}


def load(name: str) -> string.Template:
    if name not in _cache:
        text = resources.files(__package__).joinpath(f"{name}.txt").read_text("utf-8")
        _cache[name] = string.Template(text)
    return _cache[name]


def fill(name: str, **values: str) -> str:
    return load(name).substitute(**values)

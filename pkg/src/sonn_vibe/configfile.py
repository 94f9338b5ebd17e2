"""Plain ``key = value`` configuration files.

One assignment per line, ``#`` starts a comment, blank lines ignored.
Dotted keys namespace the sections (``geometry.balls``, ``profile.severe.defect``,
``net.q``, ...). Values stay strings; consumers convert.
"""

from __future__ import annotations

import os

from .errors import FormatError


def parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise FormatError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    with open(path) as fh:
        return parse_kv_text(fh.read())

"""Shared on-disk container: length-prefixed JSON header + raw payload.

Layout: 8-byte little-endian header length, UTF-8 JSON header, payload bytes.
Used by volume files, mask files, and weight checkpoints. All writes are
whole-file atomic (write to a temp sibling, then rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

_LEN = struct.Struct("<Q")


def write_container(path, header: dict, payload: bytes = b"") -> None:
    path = Path(path)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(_LEN.pack(len(head)))
            f.write(head)
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path) -> tuple[dict, bytes]:
    with open(path, "rb") as f:
        raw = f.read(_LEN.size)
        if len(raw) != _LEN.size:
            raise ValueError(f"{path}: truncated container header")
        (hlen,) = _LEN.unpack(raw)
        head = f.read(hlen)
        if len(head) != hlen:
            raise ValueError(f"{path}: truncated container header")
        payload = f.read()
    return json.loads(head.decode("utf-8")), payload


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

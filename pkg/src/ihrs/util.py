"""Small filesystem helpers shared by the detectors."""

from __future__ import annotations

import hashlib
import ipaddress
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path

CHUNK_SIZE = 1 << 20

_NOATIME = getattr(os, "O_NOATIME", 0)


def open_noatime(path: str | os.PathLike) -> int:
    """Open ``path`` read-only, avoiding an atime update when the kernel allows it.

    O_NOATIME is refused with EPERM for files the caller does not own, so we
    fall back to a plain read-only open.
    """
    flags = os.O_RDONLY | getattr(os, "O_CLOEXEC", 0)
    if _NOATIME:
        try:
            return os.open(path, flags | _NOATIME)
        except PermissionError:
            pass
    return os.open(path, flags)


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    fd = open_noatime(path)
    try:
        while True:
            chunk = os.read(fd, CHUNK_SIZE)
            if not chunk:
                break
            h.update(chunk)
    finally:
        os.close(fd)
    return h.hexdigest()


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Replace ``path`` with ``data`` so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def ip_key(addr: str) -> int:
    return int(ipaddress.IPv4Address(addr))


def is_ipv4(text: str) -> bool:
    try:
        ipaddress.IPv4Address(text)
    except ValueError:
        return False
    return True


def utcnow() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def iso(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).isoformat()


def parse_iso(text: str) -> datetime:
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt

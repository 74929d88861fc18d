"""Incremental backup planning and execution over a sealed, identity-pinned channel.

Transport cryptography is not implemented here. A channel only has to
promise three things: it knows the peer identity (pinned on first use via
a known-hosts file), it seals every payload before the transport sees it,
and it can write or delete a file at the destination.
"""

from __future__ import annotations

import hashlib
import logging
import os
import posixpath
import secrets
import stat
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .util import atomic_write, sha256_file

log = logging.getLogger(__name__)

IDENTITY_FILE = ".ihrs-identity"


def normalize_rel(rel_path: str) -> str:
    norm = posixpath.normpath(rel_path.replace(os.sep, "/"))
    if norm.startswith("/") or norm == ".." or norm.startswith("../") or norm in ("", "."):
        raise ValueError(f"path escapes the sync root: {rel_path!r}")
    return norm


@dataclass(frozen=True)
class FileStamp:
    rel_path: str
    size: int
    mtime: int
    digest: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "rel_path", normalize_rel(self.rel_path))


def enumerate_tree(root: str | os.PathLike, checksum: bool = False) -> list[FileStamp]:
    """Regular files under ``root`` as stamps; the identity marker file is skipped."""
    root = os.fspath(root)
    out = []
    if not os.path.isdir(root):
        return out
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            p = os.path.join(dirpath, name)
            rel = os.path.relpath(p, root)
            if rel == IDENTITY_FILE:
                continue
            st = os.lstat(p)
            if not stat.S_ISREG(st.st_mode):
                continue
            out.append(FileStamp(rel, st.st_size, int(st.st_mtime), sha256_file(p) if checksum else None))
    return out


@dataclass
class SyncPlan:
    to_send: list[str] = field(default_factory=list)
    to_delete: list[str] = field(default_factory=list)
    unchanged: int = 0

    def __bool__(self) -> bool:
        return bool(self.to_send or self.to_delete)


def plan_sync(source: Iterable[FileStamp], dest: Iterable[FileStamp], mirror: bool = False,
              checksum: bool = False) -> SyncPlan:
    """Quick check on size and mtime; with ``checksum``, on size and digest."""
    src = {s.rel_path: s for s in source}
    dst = {s.rel_path: s for s in dest}
    plan = SyncPlan()
    for rel in sorted(src):
        s, d = src[rel], dst.get(rel)
        if d is None:
            plan.to_send.append(rel)
        elif checksum and (s.digest is None or d.digest is None):
            raise ValueError("checksum mode needs digests on both sides")
        elif s.size != d.size or (s.digest != d.digest if checksum else s.mtime != d.mtime):
            plan.to_send.append(rel)
        else:
            plan.unchanged += 1
    if mirror:
        plan.to_delete = sorted(set(dst) - set(src))
    return plan


@dataclass(frozen=True)
class ChannelIdentity:
    host: str
    fingerprint: str


class HostKeyMismatch(RuntimeError):
    pass


class KnownHosts:
    """``host<TAB>fingerprint`` lines. Unknown hosts are pinned on first contact."""

    def __init__(self, path: str | Path | None = None, entries: dict[str, str] | None = None):
        self.path = Path(path) if path else None
        self.entries = dict(entries or {})
        if self.path and self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip() and not line.startswith("#"):
                    host, _, fp = line.partition("\t")
                    self.entries[host] = fp.strip()

    def verify(self, identity: ChannelIdentity, pin_new: bool = True) -> None:
        pinned = self.entries.get(identity.host)
        if pinned is None:
            if not pin_new:
                raise HostKeyMismatch(f"{identity.host} is not a known host")
            log.warning("pinning new host %s (%s)", identity.host, identity.fingerprint)
            self.entries[identity.host] = identity.fingerprint
            self.save()
        elif pinned != identity.fingerprint:
            raise HostKeyMismatch(
                f"identity of {identity.host} changed: pinned {pinned}, offered {identity.fingerprint}"
            )

    def save(self) -> None:
        if self.path:
            atomic_write(self.path, "".join(f"{h}\t{f}\n" for h, f in sorted(self.entries.items())).encode())


class SealedChannel(Protocol):
    identity: ChannelIdentity

    def seal(self, data: bytes) -> bytes: ...

    def send(self, rel_path: str, sealed: bytes, mtime: int) -> None: ...

    def delete(self, rel_path: str) -> None: ...


class LoopbackChannel:
    """Writes into a local directory. Sealing defaults to the identity transform.

    The destination's identity is a random token kept in ``.ihrs-identity``;
    its SHA-256 is the fingerprint that gets pinned.
    """

    def __init__(self, dest_root: str | os.PathLike, host: str = "localhost",
                 seal: Callable[[bytes], bytes] | None = None,
                 unseal: Callable[[bytes], bytes] | None = None):
        self.root = Path(dest_root)
        self.root.mkdir(parents=True, exist_ok=True)
        token_path = self.root / IDENTITY_FILE
        if not token_path.exists():
            token_path.write_text(secrets.token_hex(32) + "\n")
        fp = hashlib.sha256(token_path.read_bytes()).hexdigest()
        self.identity = ChannelIdentity(host, fp)
        self._seal = seal or (lambda b: b)
        self._unseal = unseal or (lambda b: b)

    def seal(self, data: bytes) -> bytes:
        return self._seal(data)

    def _target(self, rel_path: str) -> Path:
        return self.root / normalize_rel(rel_path)

    def send(self, rel_path: str, sealed: bytes, mtime: int) -> None:
        target = self._target(rel_path)
        atomic_write(target, self._unseal(sealed))
        os.utime(target, (mtime, mtime))

    def delete(self, rel_path: str) -> None:
        self._target(rel_path).unlink(missing_ok=True)


@dataclass
class SyncReport:
    sent: list[str] = field(default_factory=list)
    deleted: list[str] = field(default_factory=list)
    failed: list[tuple[str, str]] = field(default_factory=list)
    bytes_sent: int = 0

    @property
    def ok(self) -> bool:
        return not self.failed


def execute_sync(plan: SyncPlan, source_root: str | os.PathLike, channel: SealedChannel,
                 known_hosts: KnownHosts | None = None) -> SyncReport:
    """Send whole files in plan order; one failure does not stop the rest.

    Raises HostKeyMismatch before anything is transmitted if the peer's
    identity disagrees with the pinned one.
    """
    if known_hosts is not None:
        known_hosts.verify(channel.identity)
    report = SyncReport()
    root = Path(source_root)
    for rel in plan.to_send:
        try:
            path = root / normalize_rel(rel)
            st = os.stat(path)
            data = path.read_bytes()
            sealed = channel.seal(data)
            channel.send(rel, sealed, int(st.st_mtime))
        except (OSError, ValueError) as exc:
            log.error("backup of %s failed: %s", rel, exc)
            report.failed.append((rel, str(exc)))
            continue
        report.sent.append(rel)
        report.bytes_sent += len(sealed)
    for rel in plan.to_delete:
        try:
            channel.delete(rel)
        except (OSError, ValueError) as exc:
            report.failed.append((rel, str(exc)))
            continue
        report.deleted.append(rel)
    return report

"""Sealed baseline database, integrity checking, approved updates and triage.

Baseline file layout (``<host>.twd``)::

    version=1
    host=<hostname>
    created=<iso datetime>
    salt=<hex>
    <path>\t<size>\t<mtime>\t<mode>\t<uid>\t<gid>\t<sha256>
    ...
    seal=<hmac-sha256 hex>

The seal is an HMAC over every byte before the seal line, keyed by
PBKDF2 of the passphrase and the stored salt.
"""

from __future__ import annotations

import hashlib
import hmac
import logging
import os
import re
import socket
import stat
from dataclasses import dataclass, field
from datetime import datetime
from functools import lru_cache
from pathlib import Path
from typing import Iterable

from .util import atomic_write, iso, parse_iso, sha256_file, utcnow

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
KDF_ITERATIONS = 100_000
ATTRIBUTES = ("size", "mtime", "digest", "mode", "uid", "gid")
ADVICE = "Please replace {path} with a clean backed up version"

_HEX64 = re.compile(r"[0-9a-f]{64}")


class BaselineError(ValueError):
    pass


class SealError(BaselineError):
    """Seal mismatch: wrong passphrase or a tampered file."""


@dataclass(frozen=True)
class FileRecord:
    path: str
    size: int
    mtime: int
    digest: str
    mode: int
    uid: int
    gid: int

    def __post_init__(self):
        if not _HEX64.fullmatch(self.digest):
            raise ValueError(f"digest must be 64 lowercase hex chars: {self.digest!r}")
        if "\t" in self.path or "\n" in self.path:
            raise ValueError(f"path cannot hold tabs or newlines: {self.path!r}")

    def line(self) -> str:
        return f"{self.path}\t{self.size}\t{self.mtime}\t{self.mode:o}\t{self.uid}\t{self.gid}\t{self.digest}\n"


@dataclass(frozen=True)
class BaselineDb:
    host: str
    created_at: datetime
    salt: bytes
    records: tuple[FileRecord, ...]
    seal: str
    version: int = FORMAT_VERSION
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        paths = [r.path for r in self.records]
        if any(a >= b for a, b in zip(paths, paths[1:])):
            raise BaselineError("records must be strictly sorted by path")

    @property
    def filename(self) -> str:
        return f"{self.host}.twd"

    def by_path(self) -> dict[str, FileRecord]:
        return {r.path: r for r in self.records}

    def body(self) -> bytes:
        return _body(self.version, self.host, self.created_at, self.salt, self.records)

    def dumps(self) -> bytes:
        return self.body() + f"seal={self.seal}\n".encode()

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / self.filename
        atomic_write(path, self.dumps())
        return path


@dataclass(frozen=True)
class ModifiedFile:
    path: str
    changed: frozenset[str]
    digest_known: bool = True


@dataclass
class IntegrityReport:
    added: list[str] = field(default_factory=list)
    removed: list[str] = field(default_factory=list)
    modified: list[ModifiedFile] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.added or self.removed or self.modified)

    def paths(self) -> set[str]:
        return set(self.added) | set(self.removed) | {m.path for m in self.modified}


@dataclass(frozen=True)
class CriticalFinding:
    path: str
    advice: str


def _body(version, host, created_at, salt, records) -> bytes:
    head = f"version={version}\nhost={host}\ncreated={iso(created_at)}\nsalt={salt.hex()}\n"
    return (head + "".join(r.line() for r in records)).encode("utf-8", "surrogateescape")


@lru_cache(maxsize=32)
def _derive_key(passphrase: str, salt: bytes) -> bytes:
    return hashlib.pbkdf2_hmac("sha256", passphrase.encode(), salt, KDF_ITERATIONS)


def compute_seal(body: bytes, passphrase: str, salt: bytes) -> str:
    return hmac.new(_derive_key(passphrase, salt), body, hashlib.sha256).hexdigest()


def make_baseline(records, passphrase: str, host=None, created_at=None, salt=None, warnings=()) -> BaselineDb:
    host = host or socket.gethostname()
    created_at = created_at or utcnow()
    salt = salt if salt is not None else os.urandom(16)
    records = tuple(sorted(records, key=lambda r: r.path))
    seal = compute_seal(_body(FORMAT_VERSION, host, created_at, salt, records), passphrase, salt)
    return BaselineDb(host, created_at, salt, records, seal, warnings=tuple(warnings))


def loads(data: bytes, passphrase: str) -> BaselineDb:
    """Parse and verify a serialized baseline. Any deviation raises."""
    if not data.endswith(b"\n"):
        raise BaselineError("truncated baseline")
    cut = data.rfind(b"\n", 0, len(data) - 1) + 1
    body, trailer = data[:cut], data[cut:]
    m = re.fullmatch(rb"seal=([0-9a-f]{64})\n", trailer)
    if m is None:
        raise BaselineError("missing or malformed seal line")
    lines = body.decode("utf-8", "surrogateescape").split("\n")[:-1]
    header = {}
    for key, line in zip(("version", "host", "created", "salt"), lines):
        k, sep, v = line.partition("=")
        if k != key or not sep:
            raise BaselineError(f"bad header line {line!r}")
        header[k] = v
    if len(header) != 4:
        raise BaselineError("incomplete header")
    try:
        salt = bytes.fromhex(header["salt"])
    except ValueError as exc:
        raise BaselineError("bad salt") from exc
    if not hmac.compare_digest(compute_seal(body, passphrase, salt), m[1].decode()):
        raise SealError("baseline seal does not verify (wrong passphrase or tampered file)")
    try:
        version = int(header["version"])
        records = []
        for line in lines[4:]:
            path, size, mtime, mode, uid, gid, digest = line.split("\t")
            records.append(FileRecord(path, int(size), int(mtime), digest, int(mode, 8), int(uid), int(gid)))
        db = BaselineDb(header["host"], parse_iso(header["created"]), salt, tuple(records), m[1].decode(), version)
    except ValueError as exc:
        raise BaselineError(f"malformed baseline: {exc}") from exc
    if version != FORMAT_VERSION:
        raise BaselineError(f"unsupported baseline version {version}")
    if db.body() != body:
        raise BaselineError("baseline is not in canonical form")
    return db


def load(path: str | Path, passphrase: str) -> BaselineDb:
    return loads(Path(path).read_bytes(), passphrase)


def _stat_record(path: str, st: os.stat_result) -> FileRecord:
    return FileRecord(
        path=path,
        size=st.st_size,
        mtime=int(st.st_mtime),
        digest=sha256_file(path),
        mode=stat.S_IMODE(st.st_mode),
        uid=st.st_uid,
        gid=st.st_gid,
    )


def _walk(roots: Iterable[str | os.PathLike]) -> dict[str, os.stat_result]:
    """Regular files under ``roots`` (symlinks not followed), keyed by absolute path."""
    found = {}

    def onerror(exc):
        log.warning("cannot list %s: %s", exc.filename, exc)

    for root in roots:
        root = os.path.abspath(root)
        st = os.lstat(root)
        if stat.S_ISREG(st.st_mode):
            found[root] = st
            continue
        for dirpath, dirnames, filenames in os.walk(root, onerror=onerror):
            dirnames.sort()
            for name in filenames:
                p = os.path.join(dirpath, name)
                try:
                    st = os.lstat(p)
                except OSError as exc:
                    log.warning("cannot stat %s: %s", p, exc)
                    continue
                if stat.S_ISREG(st.st_mode):
                    found[p] = st
    return found


def init_baseline(roots, passphrase: str, host=None, created_at=None, salt=None) -> BaselineDb:
    roots = list(roots)
    if not roots:
        raise BaselineError("no roots given")
    records, warnings = [], []
    for path, st in sorted(_walk(roots).items()):
        if "\t" in path or "\n" in path:
            warnings.append(f"{path!r}: unsupported characters in path, skipped")
            continue
        try:
            records.append(_stat_record(path, st))
        except OSError as exc:
            warnings.append(f"{path}: {exc.strerror or exc}")
    for w in warnings:
        log.warning("baseline: %s", w)
    return make_baseline(records, passphrase, host, created_at, salt, warnings)


def check(roots, baseline: BaselineDb, paranoid: bool = False) -> IntegrityReport:
    """Compare the live tree with ``baseline``.

    Digests are recomputed only when size or mtime moved, unless ``paranoid``.
    """
    live = _walk(roots)
    known = baseline.by_path()
    report = IntegrityReport()
    report.added = sorted(p for p in live if p not in known)
    report.removed = sorted(p for p in known if p not in live)
    for path in sorted(set(live) & set(known)):
        old, st = known[path], live[path]
        changed = set()
        if st.st_size != old.size:
            changed.add("size")
        if int(st.st_mtime) != old.mtime:
            changed.add("mtime")
        if stat.S_IMODE(st.st_mode) != old.mode:
            changed.add("mode")
        if st.st_uid != old.uid:
            changed.add("uid")
        if st.st_gid != old.gid:
            changed.add("gid")
        digest_known = True
        if paranoid or {"size", "mtime"} & changed:
            try:
                if sha256_file(path) != old.digest:
                    changed.add("digest")
            except OSError:
                changed.add("digest")
                digest_known = False
        if changed:
            report.modified.append(ModifiedFile(path, frozenset(changed), digest_known))
    return report


class UnknownPathError(KeyError):
    pass


def update_baseline(baseline: BaselineDb, report: IntegrityReport, approved, passphrase: str,
                    created_at=None) -> BaselineDb:
    """Fold the approved subset of ``report`` into a freshly sealed baseline."""
    approved = set(approved)
    stray = sorted(approved - report.paths())
    if stray:
        raise UnknownPathError(f"not in report: {stray[0]}")
    records = baseline.by_path()
    for path in sorted(approved):
        try:
            st = os.lstat(path)
            if not stat.S_ISREG(st.st_mode):
                raise FileNotFoundError(path)
            records[path] = _stat_record(path, st)
        except FileNotFoundError:
            records.pop(path, None)
    return make_baseline(records.values(), passphrase, baseline.host, created_at, baseline.salt)


def load_severity_list(path: str | Path) -> list[str]:
    names = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            names.append(line)
    return names


def severity_triage(report: IntegrityReport, severity_list: Iterable[str]) -> list[CriticalFinding]:
    critical = set(severity_list)
    return [
        CriticalFinding(m.path, ADVICE.format(path=m.path))
        for m in report.modified
        if os.path.basename(m.path) in critical
    ]


def render_report(report: IntegrityReport, when: datetime | None = None) -> str:
    out = [f"Integrity check report generated {iso(when or utcnow())}", ""]
    out.append(f"Added: {len(report.added)}  Removed: {len(report.removed)}  Modified: {len(report.modified)}")
    out.append("")
    for p in report.added:
        out.append(f"Added object name:    {p}")
    for p in report.removed:
        out.append(f"Removed object name:  {p}")
    for m in report.modified:
        attrs = ",".join(a for a in ATTRIBUTES if a in m.changed)
        suffix = "" if m.digest_known else " (digest unknown: unreadable)"
        out.append(f"Modified object name: {m.path}  [{attrs}]{suffix}")
    return "\n".join(out) + "\n"


def write_report(report: IntegrityReport, reports_dir: str | Path, host: str, when: datetime | None = None) -> Path:
    when = when or utcnow()
    path = Path(reports_dir) / f"{host}-{when.strftime('%Y%m%d-%H%M%S')}.txt"
    atomic_write(path, render_report(report, when).encode("utf-8", "surrogateescape"))
    return path

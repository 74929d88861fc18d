"""Signature scanning, remediation and signature database updates.

Signature database text format::

    version 7
    published 2024-01-01T00:00:00+00:00
    EICAR-Test:58354f2150254041505b345c505a58353428505e2937434329377d2443432937
    name:hexpattern[:min_length]

Exit codes follow the command-line scanner convention: 0 clean, 1 infected,
54 some file could not be opened (and nothing was found).
"""

from __future__ import annotations

import fcntl
import json
import logging
import os
import shutil
import stat
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .util import atomic_write, iso, open_noatime, parse_iso, utcnow

log = logging.getLogger(__name__)

EXIT_CLEAN = 0
EXIT_INFECTED = 1
EXIT_CANT_OPEN = 54

DB_FILENAME = "signatures.db"
ADVICE = "Please replace {path} with a clean backed up version"
READ_SIZE = 1 << 20


class SignatureDbError(ValueError):
    pass


class ScanRootMissing(FileNotFoundError):
    pass


@dataclass(frozen=True)
class Signature:
    name: str
    pattern: bytes
    min_length: int = 0

    def __post_init__(self):
        if not self.pattern:
            raise ValueError(f"signature {self.name!r} has an empty pattern")
        if not self.min_length:
            object.__setattr__(self, "min_length", len(self.pattern))
        if self.min_length < len(self.pattern):
            raise ValueError(f"signature {self.name!r}: min_length shorter than pattern")
        if not self.name or ":" in self.name or "\n" in self.name:
            raise ValueError(f"bad signature name {self.name!r}")


@dataclass(frozen=True)
class SignatureDb:
    version: int
    published_at: datetime
    signatures: tuple[Signature, ...]

    def dumps(self) -> bytes:
        lines = [f"version {self.version}", f"published {iso(self.published_at)}"]
        for s in self.signatures:
            line = f"{s.name}:{s.pattern.hex()}"
            if s.min_length != len(s.pattern):
                line += f":{s.min_length}"
            lines.append(line)
        return ("\n".join(lines) + "\n").encode()

    @classmethod
    def loads(cls, data: bytes) -> "SignatureDb":
        version = published = None
        sigs = []
        for n, line in enumerate(data.decode().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                if line.startswith("version "):
                    version = int(line.split(None, 1)[1])
                elif line.startswith("published "):
                    published = parse_iso(line.split(None, 1)[1])
                else:
                    parts = line.split(":")
                    if len(parts) not in (2, 3):
                        raise ValueError("expected name:hex[:min_length]")
                    min_len = int(parts[2]) if len(parts) == 3 else 0
                    sigs.append(Signature(parts[0], bytes.fromhex(parts[1]), min_len))
            except ValueError as exc:
                raise SignatureDbError(f"line {n}: {exc}") from exc
        if version is None or published is None:
            raise SignatureDbError("missing version or published header")
        return cls(version, published, tuple(sigs))

    @classmethod
    def load(cls, path: str | Path) -> "SignatureDb":
        return cls.loads(Path(path).read_bytes())


@dataclass
class ScanReport:
    scanned: int = 0
    infected: list[tuple[str, str]] = field(default_factory=list)
    unreadable: list[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        if self.infected:
            return EXIT_INFECTED
        if self.unreadable:
            return EXIT_CANT_OPEN
        return EXIT_CLEAN


def _default_reader(path: str):
    return os.fdopen(open_noatime(path), "rb")


def match_stream(fh, signatures: tuple[Signature, ...]) -> Signature | None:
    """Return the earliest-listed signature found anywhere in ``fh``."""
    if not signatures:
        return None
    overlap = max(len(s.pattern) for s in signatures) - 1
    hit = [False] * len(signatures)
    tail = b""
    total = 0
    while True:
        chunk = fh.read(READ_SIZE)
        if not chunk:
            break
        total += len(chunk)
        window = tail + chunk
        for i, sig in enumerate(signatures):
            if not hit[i] and sig.pattern in window:
                hit[i] = True
        if hit[0]:
            break
        tail = window[-overlap:] if overlap else b""
    for i, sig in enumerate(signatures):
        if hit[i] and total >= sig.min_length:
            return sig
    return None


def _iter_files(root: str, recursive: bool):
    st = os.lstat(root)
    if stat.S_ISREG(st.st_mode):
        yield root
        return
    if not recursive:
        with os.scandir(root) as it:
            for entry in sorted(it, key=lambda e: e.name):
                if entry.is_file(follow_symlinks=False):
                    yield entry.path
        return
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            p = os.path.join(dirpath, name)
            try:
                if stat.S_ISREG(os.lstat(p).st_mode):
                    yield p
            except OSError:
                yield p


def scan_path(root: str | os.PathLike, db: SignatureDb, recursive: bool = True,
              reader: Callable[[str], object] = _default_reader) -> ScanReport:
    """Scan regular files under ``root`` against every signature in ``db``.

    ``reader`` opens a path for binary reading; the default avoids atime updates.
    """
    root = os.fspath(root)
    if not os.path.lexists(root):
        raise ScanRootMissing(root)
    if not db.signatures:
        raise SignatureDbError("signature database is empty")
    report = ScanReport()
    for path in _iter_files(root, recursive):
        report.scanned += 1
        try:
            with reader(path) as fh:
                sig = match_stream(fh, db.signatures)
        except OSError as exc:
            log.info("cannot open %s: %s", path, exc)
            report.unreadable.append(path)
            continue
        if sig is not None:
            report.infected.append((path, sig.name))
    return report


def write_infected_list(report: ScanReport, path: str | Path) -> None:
    atomic_write(path, "".join(f"{p}: {s}\n" for p, s in report.infected).encode("utf-8", "surrogateescape"))


def read_infected_list(path: str | Path) -> list[tuple[str, str]]:
    out = []
    for line in Path(path).read_text("utf-8", "surrogateescape").splitlines():
        if line.strip():
            p, _, sig = line.rpartition(": ")
            out.append((p, sig))
    return out


@dataclass
class RemediationReport:
    advisories: list[tuple[str, str]] = field(default_factory=list)
    quarantined: list[tuple[str, str]] = field(default_factory=list)
    deleted: list[str] = field(default_factory=list)
    unremediated: list[tuple[str, str]] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.advisories or self.quarantined or self.deleted or self.unremediated)


def _quarantine_name(qdir: Path, base: str) -> Path:
    n = 0
    while True:
        candidate = qdir / (f"{base}.{n}" if n else base)
        if not candidate.exists() and not candidate.with_name(candidate.name + ".json").exists():
            return candidate
        n += 1


def remediate(report: ScanReport, severity_list: Iterable[str], quarantine_dir: str | Path,
              delete: bool = False, now: datetime | None = None) -> RemediationReport:
    """Critical files get a restore advisory; the rest are quarantined (or deleted)."""
    critical = set(severity_list)
    qdir = Path(quarantine_dir)
    out = RemediationReport()
    for path, sig in report.infected:
        base = os.path.basename(path)
        if base in critical:
            out.advisories.append((path, ADVICE.format(path=path)))
            continue
        try:
            if delete:
                os.unlink(path)
                out.deleted.append(path)
                continue
            target = _quarantine_name(qdir, base)
            shutil.move(path, target)
            meta = {"original_path": path, "signature": sig, "quarantined_at": iso(now or utcnow())}
            target.with_name(target.name + ".json").write_text(json.dumps(meta, indent=2) + "\n")
            out.quarantined.append((path, str(target)))
        except OSError as exc:
            log.error("could not remediate %s: %s", path, exc)
            out.unremediated.append((path, str(exc)))
    return out


@dataclass
class UpdateConfig:
    database_dir: str
    log_file: str | None = None
    owner: str | None = None
    mirrors: list[str] = field(default_factory=list)
    max_attempts: int = 3
    checks_per_day: int = 12
    notify_target: str | None = None
    dns_info: str | None = None
    extra: dict[str, list[str]] = field(default_factory=dict)


class UpdateConfigError(ValueError):
    pass


_CONFIG_KEYS = {
    "DatabaseDirectory": "database_dir",
    "UpdateLogFile": "log_file",
    "DatabaseOwner": "owner",
    "NotifyClamd": "notify_target",
    "DNSDatabaseInfo": "dns_info",
}


def load_update_config(path: str | Path) -> UpdateConfig:
    values: dict[str, object] = {}
    mirrors: list[str] = []
    extra: dict[str, list[str]] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        value = value.strip()
        try:
            if key == "DatabaseMirror":
                mirrors.append(value)
            elif key == "MaxAttempts":
                values["max_attempts"] = int(value)
            elif key == "Checks":
                values["checks_per_day"] = int(value)
            elif key in _CONFIG_KEYS:
                values[_CONFIG_KEYS[key]] = value
            else:
                extra.setdefault(key, []).append(value)
        except ValueError as exc:
            raise UpdateConfigError(f"line {n}: {key}: {exc}") from exc
    if "database_dir" not in values:
        raise UpdateConfigError("missing required key DatabaseDirectory")
    return UpdateConfig(mirrors=mirrors, extra=extra, **values)


class FetchError(OSError):
    pass


class Fetcher(Protocol):
    def fetch(self, mirror: str) -> tuple[int, bytes]: ...


class UrlFetcher:
    """Fetches ``<mirror>/signatures.db``; bare host names are treated as https."""

    def __init__(self, timeout: float = 30.0):
        self.timeout = timeout

    def fetch(self, mirror: str) -> tuple[int, bytes]:
        if "://" not in mirror:
            mirror = f"https://{mirror}"
        url = mirror.rstrip("/") + "/" + DB_FILENAME
        try:
            with urllib.request.urlopen(url, timeout=self.timeout) as resp:
                data = resp.read()
        except OSError as exc:
            raise FetchError(f"{url}: {exc}") from exc
        try:
            return SignatureDb.loads(data).version, data
        except (SignatureDbError, UnicodeDecodeError) as exc:
            raise FetchError(f"{url}: {exc}") from exc


class UpdateFailed(RuntimeError):
    def __init__(self, attempts: int):
        super().__init__(f"signature update failed after {attempts} attempts")
        self.attempts = attempts


@dataclass
class UpdateResult:
    db: SignatureDb | None
    updated: bool
    attempts: int
    mirror: str | None = None


def current_db(config: UpdateConfig) -> SignatureDb | None:
    path = Path(config.database_dir) / DB_FILENAME
    if not path.exists():
        return None
    return SignatureDb.load(path)


def update_db(config: UpdateConfig, fetcher: Fetcher) -> UpdateResult:
    """Try each mirror up to ``max_attempts`` times; install the first newer database."""
    dbdir = Path(config.database_dir)
    dbdir.mkdir(parents=True, exist_ok=True)
    with open(dbdir / f".{DB_FILENAME}.lock", "w") as lockf:
        fcntl.flock(lockf, fcntl.LOCK_EX)
        current = current_db(config)
        attempts = 0
        for mirror in config.mirrors:
            for _ in range(config.max_attempts):
                attempts += 1
                try:
                    version, data = fetcher.fetch(mirror)
                    fetched = SignatureDb.loads(data)
                    if fetched.version != version:
                        raise FetchError(f"{mirror}: advertised version {version}, got {fetched.version}")
                except (OSError, SignatureDbError, UnicodeDecodeError) as exc:
                    log.warning("attempt %d on %s failed: %s", attempts, mirror, exc)
                    continue
                if current is not None and fetched.version <= current.version:
                    return UpdateResult(current, False, attempts, mirror)
                atomic_write(dbdir / DB_FILENAME, data)
                return UpdateResult(fetched, True, attempts, mirror)
        raise UpdateFailed(attempts)

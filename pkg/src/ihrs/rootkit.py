"""Rootkit audit: binary digests against a known-good manifest, wtmp gaps,
promiscuous interfaces, and a single admin alert per run."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol

from .util import sha256_file

log = logging.getLogger(__name__)

INFECTED_BINARY = "infected-binary"
WTMP_GAP = "wtmp-gap"
PROMISCUOUS = "promiscuous-interface"

# Binary names checked by chkrootkit, used when building a manifest.
DEFAULT_BINARIES = (
    "aliens", "dirname", "echo", "egrep", "env", "find", "fingerd", "gpm", "grep",
    "hdparm", "su", "ifconfig", "inetd", "inetdconf", "rpcinfo", "rlogind", "rshd",
    "slogin", "sendmail", "sshd", "syslogd", "tar", "tcpd", "top", "telnetd",
    "timed", "traceroute", "write",
)
SEARCH_DIRS = ("bin", "sbin", "usr/bin", "usr/sbin", "usr/local/bin", "usr/local/sbin", "")

IFF_PROMISC = 0x100


@dataclass(frozen=True)
class AuditFinding:
    kind: str
    subject: str
    detail: str

    def __post_init__(self):
        if self.kind not in (INFECTED_BINARY, WTMP_GAP, PROMISCUOUS):
            raise ValueError(f"unknown finding kind {self.kind!r}")


@dataclass(frozen=True)
class BinaryManifest:
    entries: Mapping[str, str]

    def __post_init__(self):
        for name, digest in self.entries.items():
            if not name or not digest:
                raise ValueError(f"manifest entry {name!r} has an empty name or digest")

    def dumps(self) -> str:
        return "".join(f"{n}\t{d}\n" for n, d in sorted(self.entries.items()))

    @classmethod
    def loads(cls, text: str) -> "BinaryManifest":
        entries: dict[str, str] = {}
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            name, sep, digest = line.partition("\t")
            if not sep:
                raise ValueError(f"manifest line {n}: expected name<TAB>digest")
            if name in entries:
                raise ValueError(f"manifest line {n}: duplicate entry {name!r}")
            entries[name] = digest.strip()
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "BinaryManifest":
        return cls.loads(Path(path).read_text())


def locate(root: str | os.PathLike, name: str) -> str | None:
    """Names with a slash are relative to ``root``; bare names are searched in the usual bin dirs."""
    if "/" in name:
        p = os.path.join(root, name.lstrip("/"))
        return p if os.path.lexists(p) else None
    for d in SEARCH_DIRS:
        p = os.path.join(root, d, name)
        if os.path.isfile(p):
            return p
    return None


def build_manifest(root: str | os.PathLike, names: Iterable[str] = DEFAULT_BINARIES) -> BinaryManifest:
    """Record digests of the named binaries that exist under ``root``. Run on a known-clean system."""
    entries = {}
    for name in names:
        p = locate(root, name)
        if p is not None:
            entries[name] = sha256_file(p)
    return BinaryManifest(entries)


def check_binaries(manifest: BinaryManifest, root: str | os.PathLike,
                   hasher: Callable[[str], str] = sha256_file) -> list[AuditFinding]:
    if not manifest.entries:
        raise ValueError("manifest is empty")
    findings = []
    for name in sorted(manifest.entries):
        expected = manifest.entries[name]
        path = locate(root, name)
        if path is None:
            findings.append(AuditFinding(INFECTED_BINARY, name, "missing"))
            continue
        try:
            actual = hasher(path)
        except OSError:
            findings.append(AuditFinding(INFECTED_BINARY, name, "unreadable"))
            continue
        if actual != expected:
            findings.append(AuditFinding(INFECTED_BINARY, name, f"digest mismatch at {path}: expected {expected}, found {actual}"))
    return findings


@dataclass(frozen=True)
class LoginRecord:
    user: str = ""
    terminal: str = ""
    host: str = ""
    time: int = 0

    @property
    def zeroed(self) -> bool:
        return not (self.user or self.terminal or self.host or self.time)

    def dumps(self) -> str:
        return f"{self.user}|{self.terminal}|{self.host}|{self.time}"

    @classmethod
    def loads(cls, line: str) -> "LoginRecord":
        user, terminal, host, when = line.split("|")
        return cls(user, terminal, host, int(when))


def load_login_records(path: str | Path) -> list[LoginRecord]:
    return [LoginRecord.loads(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]


def check_login_records(records: list[LoginRecord]) -> list[AuditFinding]:
    """Flag zeroed records with a real record somewhere before and after them."""
    real = [i for i, r in enumerate(records) if not r.zeroed]
    if len(real) < 2:
        return []
    first, last = real[0], real[-1]
    findings = []
    prev = records[first]
    for i in range(first + 1, last):
        if not records[i].zeroed:
            prev = records[i]
        else:
            findings.append(AuditFinding(WTMP_GAP, f"wtmp[{i}]", f"zeroed entry after login of {prev.user or '?'} at {prev.time}"))
    return findings


InterfaceProvider = Callable[[], Mapping[str, Iterable[str]]]


def fixture_interfaces(path: str | Path) -> InterfaceProvider:
    """Provider reading ``iface FLAG,FLAG`` lines from a file."""
    def provide():
        out = {}
        for line in Path(path).read_text().splitlines():
            if line.strip() and not line.startswith("#"):
                name, _, flags = line.strip().partition(" ")
                out[name] = {f.strip().upper() for f in flags.split(",") if f.strip()}
        return out
    return provide


def sysfs_interfaces(base: str = "/sys/class/net") -> Mapping[str, set[str]]:
    """Read interface flags from sysfs. No privileges needed."""
    out = {}
    try:
        names = sorted(os.listdir(base))
    except OSError:
        return out
    for name in names:
        try:
            flags = int(Path(base, name, "flags").read_text().strip(), 16)
        except (OSError, ValueError):
            continue
        out[name] = {"PROMISC"} if flags & IFF_PROMISC else set()
    return out


def check_interfaces(provider: InterfaceProvider) -> list[AuditFinding]:
    return [
        AuditFinding(PROMISCUOUS, name, "interface is in promiscuous mode")
        for name, flags in sorted(provider().items())
        if "PROMISC" in {f.upper() for f in flags}
    ]


class Mailer(Protocol):
    def send(self, subject: str, body: str) -> bool: ...


class RecordingMailer:
    def __init__(self, fail: bool = False):
        self.messages: list[tuple[str, str]] = []
        self.fail = fail

    def send(self, subject: str, body: str) -> bool:
        if self.fail:
            return False
        self.messages.append((subject, body))
        return True


class SpoolMailer:
    """Appends messages to a local mail spool file in mbox-ish form."""

    def __init__(self, path: str | Path, to: str = "root"):
        self.path = Path(path)
        self.to = to

    def send(self, subject: str, body: str) -> bool:
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a") as fh:
                fh.write(f"To: {self.to}\nSubject: {subject}\n\n{body}\n\n")
        except OSError as exc:
            log.error("mail delivery failed: %s", exc)
            return False
        return True


@dataclass
class AlertOutcome:
    status: int
    sent: bool = False
    delivery_failed: bool = False
    findings: list[AuditFinding] = field(default_factory=list)


ALERT_SUBJECT = "=== SECURITY ALERT: possible rootkit infection detected!"


def alert_admin(findings: list[AuditFinding], mailer: Mailer) -> AlertOutcome:
    if not findings:
        return AlertOutcome(0)
    body = "\n".join(f"{f.kind}: {f.subject}: {f.detail}" for f in findings)
    try:
        ok = bool(mailer.send(ALERT_SUBJECT, f"{len(findings)} finding(s)\n{body}"))
    except OSError as exc:
        log.error("mail delivery failed: %s", exc)
        ok = False
    return AlertOutcome(1, sent=ok, delivery_failed=not ok, findings=list(findings))

"""IDS fast-alert log parsing, keyword classification and offender extraction.

One alert per line::

    MM/DD-HH:MM:SS.ffffff [**] [G:S:R] <message> [**] [Classification: <text>] [Priority: N] {PROTO} SRC:SPORT -> DST:DPORT

The classification and priority blocks and the ``:PORT`` suffixes are
optional. Lines that do not fit are counted and skipped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import BinaryIO, Iterable, Iterator

from .util import ip_key, is_ipv4

_IP = r"\d{1,3}(?:\.\d{1,3}){3}"

ALERT_RE = re.compile(
    r"(?P<ts>\d{2}/\d{2}-\d{2}:\d{2}:\d{2}\.\d{6})"
    r" \[\*\*\] \[(?P<gid>\d+):(?P<sid>\d+):(?P<rev>\d+)\] (?P<message>.+?) \[\*\*\]"
    r"(?: \[Classification: (?P<classification>[^\]]*)\])?"
    r"(?: \[Priority: (?P<priority>\d+)\])?"
    rf"(?: \{{(?P<protocol>[A-Za-z0-9_-]+)\}} (?P<src>{_IP})(?::(?P<sport>\d+))?"
    rf" -> (?P<dst>{_IP})(?::(?P<dport>\d+))?)?"
)

# (category, keywords) in the order the blocking script greps them; the first
# hit wins. "unusal" is the script's spelling, kept next to the correct one.
KEYWORDS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("unknown-traffic", ("Unknown Traffic",)),
    ("information-leak", ("information leak",)),
    ("nonstandard-protocol", ("non-standard protocol or event",)),
    ("scan", ("scan",)),
    ("trojan", ("Trojan",)),
    ("denial-of-service", ("Denial of service",)),
    ("attack", ("attack",)),
    ("suspicious", ("suspicious",)),
    ("system-call", ("system call",)),
    ("misc-activity", ("Misc activity",)),
    ("vulnerable", ("vulnerable",)),
    ("privilege-gain", ("privilege gain",)),
    ("unusual-client-port", ("client was using an unusual port",)),
    ("executable-code", ("executable code was detected",)),
    ("bad-traffic", ("bad traffic",)),
    ("unusual", ("unusal", "unusual")),
    ("violation", ("violation",)),
    ("default-credentials-login", ("Attempt to login by a default username and password",)),
    ("rpc-query-decode", ("Decode of an RPC Query",)),
)

CATEGORIES = tuple(name for name, _ in KEYWORDS) + ("unclassified",)


class AlertLogReadError(OSError):
    """The alert stream failed mid-read; ``offset`` is the number of bytes consumed."""

    def __init__(self, offset: int, cause: BaseException | None = None):
        super().__init__(f"alert log unreadable after {offset} bytes: {cause}")
        self.offset = offset
        self.cause = cause


@dataclass(frozen=True)
class Alert:
    timestamp: datetime
    message: str
    raw_line: str
    classification_text: str | None = None
    priority: int | None = None
    protocol: str | None = None
    src_addr: str | None = None
    src_port: int | None = None
    dst_addr: str | None = None
    dst_port: int | None = None
    rule_id: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.src_port is not None and self.src_addr is None:
            raise ValueError("src_port given without src_addr")
        if self.dst_port is not None and self.dst_addr is None:
            raise ValueError("dst_port given without dst_addr")


@dataclass(frozen=True)
class IncidentCategory:
    name: str
    matched_keyword: str = ""

    def __post_init__(self):
        if self.name not in CATEGORIES:
            raise ValueError(f"unknown category {self.name!r}")
        if (self.name == "unclassified") != (self.matched_keyword == ""):
            raise ValueError("matched_keyword must be empty exactly for 'unclassified'")


UNCLASSIFIED = IncidentCategory("unclassified")


@dataclass(frozen=True)
class OffenderSet:
    addresses: tuple[str, ...] = ()
    allowlist_hits: int = 0

    def __iter__(self) -> Iterator[str]:
        return iter(self.addresses)

    def __len__(self) -> int:
        return len(self.addresses)


@dataclass
class ParsedLog:
    """Alerts in input order plus the number of lines that did not parse."""

    alerts: list[Alert] = field(default_factory=list)
    skipped: int = 0

    def __iter__(self) -> Iterator[Alert]:
        return iter(self.alerts)

    def __len__(self) -> int:
        return len(self.alerts)

    def __getitem__(self, i):
        return self.alerts[i]


def _port(text: str | None) -> int | None:
    if text is None:
        return None
    value = int(text)
    if value > 65535:
        raise ValueError(f"port out of range: {value}")
    return value


def _addr(text: str | None) -> str | None:
    if text is None:
        return None
    if not is_ipv4(text):
        raise ValueError(f"not an IPv4 address: {text}")
    return text


def parse_alert_line(line: str, year: int) -> Alert | None:
    """Parse one line (no terminator). Returns None when it is not an alert."""
    m = ALERT_RE.fullmatch(line.rstrip("\r"))
    if m is None:
        return None
    try:
        ts = datetime.strptime(f"{year}/{m['ts']}", "%Y/%m/%d-%H:%M:%S.%f")
        priority = int(m["priority"]) if m["priority"] is not None else None
        if priority is not None and priority < 1:
            return None
        return Alert(
            timestamp=ts.replace(tzinfo=timezone.utc),
            message=m["message"],
            raw_line=line,
            classification_text=m["classification"],
            priority=priority,
            protocol=m["protocol"].upper() if m["protocol"] else None,
            src_addr=_addr(m["src"]),
            src_port=_port(m["sport"]),
            dst_addr=_addr(m["dst"]),
            dst_port=_port(m["dport"]),
            rule_id=(int(m["gid"]), int(m["sid"]), int(m["rev"])),
        )
    except ValueError:
        return None


def _read_all(stream: BinaryIO) -> bytes:
    buf = bytearray()
    while True:
        try:
            chunk = stream.read(65536)
        except OSError as exc:
            raise AlertLogReadError(len(buf), exc) from exc
        if not chunk:
            return bytes(buf)
        buf += chunk


def parse_alert_log(source: bytes | BinaryIO, year: int | None = None) -> ParsedLog:
    """Parse a fast-alert log given as bytes or a binary stream.

    The alert format carries no year; ``year`` defaults to the current UTC year.
    """
    if year is None:
        year = datetime.now(timezone.utc).year
    data = source if isinstance(source, (bytes, bytearray)) else _read_all(source)
    result = ParsedLog()
    lines = bytes(data).split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    for raw in lines:
        line = raw.decode("utf-8", "surrogateescape")
        if not line.strip():
            continue
        alert = parse_alert_line(line, year)
        if alert is None:
            result.skipped += 1
        else:
            result.alerts.append(alert)
    return result


def classify(alert: Alert) -> IncidentCategory:
    haystacks = [alert.message.lower()]
    if alert.classification_text:
        haystacks.append(alert.classification_text.lower())
    for name, keywords in KEYWORDS:
        for kw in keywords:
            needle = kw.lower()
            if any(needle in h for h in haystacks):
                return IncidentCategory(name, kw)
    return UNCLASSIFIED


def extract_offenders(alerts: Iterable[Alert], allowlist: Iterable[str] = ()) -> OffenderSet:
    allowed = set(allowlist)
    seen: set[str] = set()
    for alert in alerts:
        if alert.src_addr is None:
            continue
        if classify(alert).name == "unclassified":
            continue
        seen.add(alert.src_addr)
    kept = sorted((a for a in seen if a not in allowed), key=ip_key)
    return OffenderSet(tuple(kept), allowlist_hits=len(seen & allowed))

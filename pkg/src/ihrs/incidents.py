"""Centralized incident log and cross-module correlation.

Store format, one record per line, append-only::

    id<TAB>module<TAB>category<TAB>subject<TAB>iso-datetime<TAB>detail

Backslash, tab and newline inside fields are escaped as ``\\\\``, ``\\t``, ``\\n``.
"""

from __future__ import annotations

import fcntl
import os
from dataclasses import dataclass
from datetime import datetime, timedelta
from functools import singledispatch
from pathlib import Path
from typing import Iterable

from .integrity import CriticalFinding, ModifiedFile
from .malware import ScanReport
from .response import ResponseAction
from .rootkit import AuditFinding
from .util import iso, parse_iso, utcnow

MODULES = ("alert", "integrity", "malware", "rootkit")


@dataclass(frozen=True)
class IncidentRecord:
    id: int
    source_module: str
    category: str
    subject: str
    observed_at: datetime
    detail: str = ""

    def __post_init__(self):
        if self.source_module not in MODULES:
            raise ValueError(f"unknown module {self.source_module!r}")

    def content(self) -> tuple:
        """Everything except the id; used where insertion order must not matter."""
        return (self.observed_at, self.source_module, self.category, self.subject, self.detail)


def _esc(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unesc(text: str) -> str:
    out, i = [], 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(text[i + 1], text[i + 1]))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def dumps_record(r: IncidentRecord) -> str:
    fields = (str(r.id), r.source_module, r.category, r.subject, iso(r.observed_at), r.detail)
    return "\t".join(_esc(f) for f in fields) + "\n"


def loads_record(line: str) -> IncidentRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 6:
        raise ValueError(f"incident line has {len(parts)} fields: {line!r}")
    id_, module, category, subject, when, detail = (_unesc(p) for p in parts)
    return IncidentRecord(int(id_), module, category, subject, parse_iso(when), detail)


@dataclass(frozen=True)
class Finding:
    """A finding already reduced to store fields."""

    source_module: str
    category: str
    subject: str
    detail: str = ""


@dataclass(frozen=True)
class Infection:
    path: str
    signature: str


@singledispatch
def normalize(finding) -> Finding:
    raise TypeError(f"no incident mapping for {type(finding).__name__}")


@normalize.register
def _(finding: Finding) -> Finding:
    return finding


@normalize.register
def _(finding: ResponseAction) -> Finding:
    return Finding("alert", finding.kind, finding.address, finding.rendered)


@normalize.register
def _(finding: CriticalFinding) -> Finding:
    return Finding("integrity", "critical-file-modified", finding.path, finding.advice)


@normalize.register
def _(finding: ModifiedFile) -> Finding:
    return Finding("integrity", "modified", finding.path, ",".join(sorted(finding.changed)))


@normalize.register
def _(finding: Infection) -> Finding:
    return Finding("malware", "infected", finding.path, finding.signature)


@normalize.register
def _(finding: AuditFinding) -> Finding:
    return Finding("rootkit", finding.kind, finding.subject, finding.detail)


FINDING_TYPES = (Finding, ResponseAction, CriticalFinding, ModifiedFile, Infection, AuditFinding)


def integrity_findings(report) -> list[Finding | ModifiedFile]:
    out: list = [Finding("integrity", "added", p) for p in report.added]
    out += [Finding("integrity", "removed", p) for p in report.removed]
    out += list(report.modified)
    return out


def infections(report: ScanReport) -> list[Infection]:
    return [Infection(p, s) for p, s in report.infected]


class StoreError(OSError):
    pass


class IncidentStore:
    """Append-only incident log; writers take an exclusive flock."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def records(self) -> list[IncidentRecord]:
        if not self.path.exists():
            return []
        with self.path.open("r", encoding="utf-8", errors="surrogateescape") as fh:
            fcntl.flock(fh, fcntl.LOCK_SH)
            return [loads_record(ln) for ln in fh if ln.strip()]

    def record(self, finding, observed_at: datetime | None = None) -> IncidentRecord:
        return self.record_many([finding], observed_at)[0]

    def record_many(self, findings: Iterable, observed_at: datetime | None = None) -> list[IncidentRecord]:
        normalized = [normalize(f) for f in findings]
        if not normalized:
            return []
        when = observed_at or utcnow()
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a+", encoding="utf-8", errors="surrogateescape") as fh:
                fcntl.flock(fh, fcntl.LOCK_EX)
                fh.seek(0)
                last = 0
                for line in fh:
                    if line.strip():
                        last = int(line.split("\t", 1)[0])
                out = []
                for n, f in enumerate(normalized, last + 1):
                    rec = IncidentRecord(n, f.source_module, f.category, f.subject, when, f.detail)
                    fh.write(dumps_record(rec))
                    out.append(rec)
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise StoreError(f"cannot write incident store {self.path}: {exc}") from exc
        return out


def record(store: IncidentStore, finding, observed_at: datetime | None = None) -> IncidentRecord:
    return store.record(finding, observed_at)


@dataclass(frozen=True)
class CorrelatedIncident:
    key: str
    records: tuple[IncidentRecord, ...]
    window: timedelta

    @property
    def modules(self) -> list[str]:
        return sorted({r.source_module for r in self.records})


def correlate(records: IncidentStore | Iterable[IncidentRecord], window: timedelta) -> list[CorrelatedIncident]:
    """Per subject, the earliest window-length span holding records from two or more modules."""
    if window <= timedelta(0):
        raise ValueError("window must be positive")
    if isinstance(records, IncidentStore):
        records = records.records()
    by_subject: dict[str, list[IncidentRecord]] = {}
    for r in records:
        by_subject.setdefault(r.subject, []).append(r)
    out = []
    for subject, recs in by_subject.items():
        recs.sort(key=lambda r: (*r.content(), r.id))
        for i, first in enumerate(recs):
            span = [r for r in recs[i:] if r.observed_at - first.observed_at <= window]
            if len({r.source_module for r in span}) >= 2:
                out.append(CorrelatedIncident(subject, tuple(span), window))
                break
    out.sort(key=lambda c: (c.records[0].observed_at, c.key))
    return out


def render_records(records: Iterable[IncidentRecord]) -> str:
    return "".join(dumps_record(r) for r in records)


def render_correlated(incidents: Iterable[CorrelatedIncident]) -> str:
    lines = []
    for c in incidents:
        lines.append(f"{c.key}: {len(c.records)} records from {', '.join(c.modules)}")
        for r in c.records:
            lines.append(f"  #{r.id} {iso(r.observed_at)} {r.source_module}/{r.category} {r.detail}")
    return "".join(ln + "\n" for ln in lines)

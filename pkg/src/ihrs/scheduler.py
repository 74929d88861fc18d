"""Five-field cron schedules, next-fire computation and due-job dispatch.

Day-of-month and day-of-week combine the traditional way: if either field
is ``*`` both must match (the wildcard always does); if both are restricted,
a day matches when either one does.
"""

from __future__ import annotations

import calendar
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Protocol

log = logging.getLogger(__name__)

FIELD_NAMES = ("minute", "hour", "day of month", "month", "day of week")
RANGES = ((0, 59), (0, 23), (1, 31), (1, 12), (0, 6))
# Searching further than this without a hit means the expression can never fire
# (e.g. 31 February). Leap days recur within 8 years.
SEARCH_YEARS = 9

EPOCH = datetime(1970, 1, 1)

_ITEM = re.compile(r"(?:(\*)|(\d+)(?:-(\d+))?)(?:/(\d+))?")


class CronParseError(ValueError):
    def __init__(self, index: int, message: str):
        super().__init__(f"field {index} ({FIELD_NAMES[index - 1]}): {message}" if 1 <= index <= 5 else message)
        self.index = index


class NeverFires(ValueError):
    pass


@dataclass(frozen=True)
class CronSpec:
    minute: frozenset[int]
    hour: frozenset[int]
    dom: frozenset[int]
    month: frozenset[int]
    dow: frozenset[int]
    dom_wild: bool = False
    dow_wild: bool = False

    def __post_init__(self):
        for i, (values, (lo, hi)) in enumerate(zip(self.fields(), RANGES), 1):
            if not values:
                raise CronParseError(i, "empty set")
            if min(values) < lo or max(values) > hi:
                raise CronParseError(i, f"values outside {lo}-{hi}")

    def fields(self):
        return (self.minute, self.hour, self.dom, self.month, self.dow)

    def day_matches(self, year: int, month: int, day: int) -> bool:
        if month not in self.month:
            return False
        dow = (calendar.weekday(year, month, day) + 1) % 7
        in_dom, in_dow = day in self.dom, dow in self.dow
        if self.dom_wild or self.dow_wild:
            return in_dom and in_dow
        return in_dom or in_dow

    def matches(self, t: datetime) -> bool:
        return t.minute in self.minute and t.hour in self.hour and self.day_matches(t.year, t.month, t.day)

    def __str__(self) -> str:
        return render_cron(self)


def _parse_field(index: int, text: str) -> frozenset[int]:
    lo, hi = RANGES[index - 1]
    if not text:
        raise CronParseError(index, "empty field")
    values: set[int] = set()
    for item in text.split(","):
        m = _ITEM.fullmatch(item)
        if m is None:
            raise CronParseError(index, f"cannot parse {item!r}")
        star, a, b, step = m.groups()
        if star:
            start, end = lo, hi
        else:
            start = int(a)
            end = int(b) if b is not None else start
            if step is not None and b is None:
                raise CronParseError(index, f"step needs a range or '*': {item!r}")
        if not (lo <= start <= hi and lo <= end <= hi):
            raise CronParseError(index, f"{item!r} outside {lo}-{hi}")
        if start > end:
            raise CronParseError(index, f"descending range {item!r}")
        n = int(step) if step is not None else 1
        if n < 1:
            raise CronParseError(index, "step must be at least 1")
        values.update(range(start, end + 1, n))
    return frozenset(values)


def parse_cron(expr: str) -> CronSpec:
    parts = expr.split()
    if len(parts) != 5:
        raise CronParseError(0, f"expected 5 fields, got {len(parts)}")
    sets = [_parse_field(i, p) for i, p in enumerate(parts, 1)]
    return CronSpec(*sets, dom_wild=parts[2] == "*", dow_wild=parts[4] == "*")


def _render_set(values: frozenset[int], lo: int, hi: int, wild: bool | None = None) -> str:
    full = values == frozenset(range(lo, hi + 1))
    if wild or (wild is None and full):
        return "*"
    items = []
    run: list[int] = []
    for v in sorted(values):
        if run and v == run[-1] + 1:
            run.append(v)
            continue
        if run:
            items.append(run)
        run = [v]
    items.append(run)
    return ",".join(str(r[0]) if len(r) == 1 else f"{r[0]}-{r[-1]}" for r in items)


def render_cron(spec: CronSpec) -> str:
    wilds = (None, None, spec.dom_wild, None, spec.dow_wild)
    return " ".join(
        _render_set(values, lo, hi, wild)
        for values, (lo, hi), wild in zip(spec.fields(), RANGES, wilds)
    )


def next_fire(spec: CronSpec, after: datetime) -> datetime:
    """Earliest whole minute strictly after ``after`` that matches ``spec``.

    Works on wall-clock fields; an aware ``after`` keeps its tzinfo.
    """
    tz = after.tzinfo
    start = after.replace(second=0, microsecond=0, tzinfo=None) + timedelta(minutes=1)
    minutes = sorted(spec.minute)
    hours = sorted(spec.hour)
    year, month, day = start.year, start.month, start.day
    first_day = True
    while year <= start.year + SEARCH_YEARS:
        if month in spec.month:
            last = calendar.monthrange(year, month)[1]
            while day <= last:
                if spec.day_matches(year, month, day):
                    for h in hours:
                        if first_day and h < start.hour:
                            continue
                        for m in minutes:
                            if first_day and h == start.hour and m < start.minute:
                                continue
                            return datetime(year, month, day, h, m, tzinfo=tz)
                day += 1
                first_day = False
        first_day = False
        day = 1
        month += 1
        if month > 12:
            month, year = 1, year + 1
    raise NeverFires(f"'{render_cron(spec)}' never fires")


# -- dispatch ----------------------------------------------------------------

@dataclass
class Job:
    id: str
    spec: CronSpec
    command: str
    last_run: datetime | None = None


class Executor(Protocol):
    def run(self, task: str) -> bool: ...


@dataclass
class DispatchReport:
    executed: list[tuple[str, bool]] = field(default_factory=list)

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.executed]


def _naive(t: datetime, tz) -> datetime:
    if t.tzinfo is not None:
        t = t.astimezone(tz)
    return t.replace(tzinfo=None)


def run_due(registry: list[Job], now: datetime, executor: Executor, tz=timezone.utc) -> DispatchReport:
    """Run each job whose next fire time after its last run is not later than ``now``.

    Schedule arithmetic happens on wall-clock time in ``tz``.
    """
    seen = set()
    for job in registry:
        if job.id in seen:
            raise ValueError(f"duplicate job id {job.id!r}")
        seen.add(job.id)
    report = DispatchReport()
    wall_now = _naive(now, tz)
    for job in registry:
        base = _naive(job.last_run, tz) if job.last_run else EPOCH
        try:
            due = next_fire(job.spec, base) <= wall_now
        except NeverFires:
            due = False
        if not due:
            continue
        try:
            ok = bool(executor.run(job.command))
        except Exception:
            log.exception("job %s raised", job.id)
            ok = False
        job.last_run = now
        report.executed.append((job.id, ok))
    return report


def load_crontab(text: str) -> list[Job]:
    """``<5 fields> <job-id>`` per line; the job id also names the task to run."""
    jobs = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"line {n}: expected 5 schedule fields and a job id")
        try:
            spec = parse_cron(" ".join(parts[:5]))
        except CronParseError as exc:
            raise ValueError(f"line {n}: {exc}") from exc
        jobs.append(Job(parts[5], spec, parts[5]))
    return jobs


def load_crontab_file(path: str | Path) -> list[Job]:
    return load_crontab(Path(path).read_text())


DEFAULT_CRONTAB = """\
# minute hour day-of-month month day-of-week job
00 12 * * * respond
00 12 * * * integrity
00 12 * * * antivirus
00 12 * * * rootkit
00 17 * * 5 backup
"""


def install_lines(program: str = "ihrs", config: str | None = None, jobs: Iterable[Job] | None = None) -> str:
    """Crontab lines for users who would rather let the system cron run the jobs."""
    cfg = f" --config {config}" if config else ""
    jobs = list(jobs) if jobs is not None else load_crontab(DEFAULT_CRONTAB)
    out = ["# IDS alerting should already be running at login; add to ~/.profile:",
           "#   snort -dev -c /etc/snort/snort.conf -l /var/log/snort -i eth0"]
    for job in jobs:
        out.append(f"{render_cron(job.spec)} {program}{cfg} run-task {job.command} > /dev/null 2>&1")
    return "\n".join(out) + "\n"

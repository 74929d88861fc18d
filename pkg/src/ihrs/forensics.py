"""Evidence acquisition (block imaging) and timeline analysis over body files."""

from __future__ import annotations

import calendar
import hashlib
import os
import stat
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Protocol

from .util import open_noatime

DELETED_SUFFIX = " (deleted)"


# -- imaging -----------------------------------------------------------------

class BlockSource(Protocol):
    size: int

    def read_at(self, offset: int, length: int) -> bytes: ...


class FileBlockSource:
    """A file or block device read with pread; opened without touching atime where possible."""

    def __init__(self, path: str | os.PathLike):
        self.path = os.fspath(path)
        self.fd = open_noatime(self.path)
        self.size = os.lseek(self.fd, 0, os.SEEK_END)

    def read_at(self, offset: int, length: int) -> bytes:
        buf = bytearray()
        while len(buf) < length:
            chunk = os.pread(self.fd, length - len(buf), offset + len(buf))
            if not chunk:
                break
            buf += chunk
        return bytes(buf)

    def close(self) -> None:
        os.close(self.fd)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class ImageReport:
    bytes_copied: int
    block_size: int
    error_blocks: list[tuple[int, int]] = field(default_factory=list)
    output_path: str = ""


def image_source(source: BlockSource, dest: str | os.PathLike, block_size: int = 4096) -> ImageReport:
    """Copy ``source`` to ``dest`` block by block with dd's ``conv=notrunc,noerror,sync`` behaviour.

    A block whose read fails is written as zeros at its own offset and
    recorded. Once any block has failed, the final short block is padded to a
    full block. ``dest`` is never truncated.
    """
    if block_size <= 0:
        raise ValueError("block_size must be positive")
    fd = os.open(dest, os.O_WRONLY | os.O_CREAT, 0o600)
    report = ImageReport(0, block_size, output_path=os.fspath(dest))
    try:
        offset = 0
        size = source.size
        while offset < size:
            want = min(block_size, size - offset)
            try:
                data = source.read_at(offset, want)
                if len(data) != want:
                    raise OSError(f"short read at {offset}")
            except OSError:
                report.error_blocks.append((offset, block_size))
                data = bytes(block_size)
            if report.error_blocks and len(data) < block_size:
                data += bytes(block_size - len(data))
            written = 0
            while written < len(data):
                written += os.pwrite(fd, data[written:], offset + written)
            report.bytes_copied += len(data)
            offset += want
        os.fsync(fd)
    finally:
        os.close(fd)
    return report


# -- body files --------------------------------------------------------------

@dataclass(frozen=True)
class BodyRecord:
    name: str
    hash: str = "0"
    inode: int = 0
    mode: str = "-/---------"
    uid: int = 0
    gid: int = 0
    size: int = 0
    atime: int = 0
    mtime: int = 0
    ctime: int = 0
    crtime: int = 0

    def dumps(self) -> str:
        return "|".join(str(v) for v in (
            self.hash, self.name, self.inode, self.mode, self.uid, self.gid,
            self.size, self.atime, self.mtime, self.ctime, self.crtime,
        ))

    @classmethod
    def loads(cls, line: str) -> "BodyRecord":
        parts = line.rstrip("\n").split("|")
        if len(parts) < 11:
            raise ValueError(f"body line has {len(parts)} fields, need 11")
        # A name may itself contain '|'; everything between hash and inode is the name.
        name = "|".join(parts[1:-9])
        inode, mode, uid, gid, size, atime, mtime, ctime, crtime = parts[-9:]
        return cls(name, parts[0], int(inode), mode, int(uid), int(gid), int(size),
                   int(atime), int(mtime), int(ctime), int(crtime))


def read_bodyfile(text: str) -> list[BodyRecord]:
    return [BodyRecord.loads(ln) for ln in text.splitlines() if ln.strip()]


def write_bodyfile(records: Iterable[BodyRecord]) -> str:
    return "".join(r.dumps() + "\n" for r in records)


def mode_string(st_mode: int) -> str:
    """``-/rwxr-xr-x`` style: file type letter, a slash, nine permission characters."""
    full = stat.filemode(st_mode)
    return f"{full[0]}/{full[1:]}"


@dataclass(frozen=True)
class TreeEntry:
    rel_path: str
    st: os.stat_result | None
    deleted: bool = False


class TreeSource(Protocol):
    def entries(self) -> Iterator[TreeEntry]: ...


class DirectoryTree:
    """Live directory walk. ``st`` is None for entries that cannot be stat'ed."""

    def __init__(self, root: str | os.PathLike, hash_files: bool = False):
        self.root = os.fspath(root)
        self.hash_files = hash_files

    def entries(self) -> Iterator[TreeEntry]:
        pending = [""]
        while pending:
            rel_dir = pending.pop()
            try:
                names = sorted(os.listdir(os.path.join(self.root, rel_dir)))
            except OSError:
                continue
            for name in names:
                rel = f"{rel_dir}/{name}" if rel_dir else name
                try:
                    st = os.lstat(os.path.join(self.root, rel))
                except OSError:
                    yield TreeEntry(rel, None)
                    continue
                yield TreeEntry(rel, st)
                if stat.S_ISDIR(st.st_mode):
                    pending.append(rel)

    def digest(self, rel_path: str) -> str:
        h = hashlib.md5()
        fd = open_noatime(os.path.join(self.root, rel_path))
        with os.fdopen(fd, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
        return h.hexdigest()


def walk_to_bodyfile(tree: TreeSource | str | os.PathLike, name_prefix: str = "/") -> list[BodyRecord]:
    """One body record per file and directory, sorted by name.

    Creation time is left at 0: a plain directory walk cannot see it.
    """
    if not hasattr(tree, "entries"):
        tree = DirectoryTree(tree)
    records = []
    for entry in tree.entries():
        name = name_prefix + entry.rel_path
        if entry.deleted:
            name += DELETED_SUFFIX
        st = entry.st
        if st is None:
            records.append(BodyRecord(name))
            continue
        digest = "0"
        if getattr(tree, "hash_files", False) and stat.S_ISREG(st.st_mode):
            try:
                digest = tree.digest(entry.rel_path)
            except OSError:
                pass
        records.append(BodyRecord(
            name=name, hash=digest, inode=st.st_ino, mode=mode_string(st.st_mode),
            uid=st.st_uid, gid=st.st_gid, size=st.st_size,
            atime=int(st.st_atime), mtime=int(st.st_mtime), ctime=int(st.st_ctime),
        ))
    records.sort(key=lambda r: r.name)
    return records


# -- timelines ---------------------------------------------------------------

@dataclass(frozen=True)
class TimelineRow:
    when: int
    size: int
    activity: str
    mode: str
    uid: int
    gid: int
    inode: int
    name: str

    def __post_init__(self):
        if len(self.activity) != 4 or self.activity == "....":
            raise ValueError(f"bad activity flags {self.activity!r}")


def _epoch(d: date | datetime | int | None) -> int | None:
    if d is None or isinstance(d, int):
        return d
    if isinstance(d, datetime):
        if d.tzinfo is None:
            d = d.replace(tzinfo=timezone.utc)
        return int(d.timestamp())
    return calendar.timegm(d.timetuple())


def activity_flags(rec: BodyRecord, when: int) -> str:
    return "".join(
        flag if t == when else "."
        for flag, t in zip("macb", (rec.mtime, rec.atime, rec.ctime, rec.crtime))
    )


def build_timeline(records: Iterable[BodyRecord], start=None, end=None) -> list[TimelineRow]:
    """Expand records into rows, one per distinct non-zero timestamp, keeping [start, end)."""
    lo, hi = _epoch(start), _epoch(end)
    if lo is not None and hi is not None and lo > hi:
        raise ValueError("start date is after end date")
    rows = []
    for rec in records:
        for when in sorted({t for t in (rec.mtime, rec.atime, rec.ctime, rec.crtime) if t}):
            if lo is not None and when < lo:
                continue
            if hi is not None and when >= hi:
                continue
            rows.append(TimelineRow(when, rec.size, activity_flags(rec, when), rec.mode,
                                    rec.uid, rec.gid, rec.inode, rec.name))
    rows.sort(key=lambda r: (r.when, r.name))
    return rows


def filter_timeline(rows: Iterable[TimelineRow], pattern: str) -> list[TimelineRow]:
    return [r for r in rows if pattern in r.name]


_DAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
_MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")


def format_when(epoch: int) -> str:
    t = datetime.fromtimestamp(epoch, timezone.utc)
    return f"{_DAYS[t.weekday()]} {_MONTHS[t.month - 1]} {t.day:02d} {t.year:04d} {t:%H:%M:%S}"


def render_timeline(rows: Iterable[TimelineRow]) -> str:
    """Fixed-width text; the date column is printed only where it changes."""
    out = []
    prev = None
    for r in rows:
        stamp = format_when(r.when) if r.when != prev else ""
        prev = r.when
        out.append(f"{stamp:<24} {r.size:>8} {r.activity} {r.mode:<12} {r.uid:<8} {r.gid:<8} {r.inode:<8} {r.name}")
    return "".join(line + "\n" for line in out)


def parse_date_arg(text: str) -> datetime:
    """``yyyy-mm-dd`` or ``yyyy-mm-ddTHH:MM:SS``, read as UTC."""
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def read_bodyfile_path(path: str | Path) -> list[BodyRecord]:
    return read_bodyfile(Path(path).read_text("utf-8", "surrogateescape"))

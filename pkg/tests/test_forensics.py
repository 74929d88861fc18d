import os
import stat
from dataclasses import astuple
from datetime import date

import pytest
from hypothesis import given, settings, strategies as st

from fakes import FaultySource
from oracles import timeline_rows
from ihrs.forensics import (
    BodyRecord,
    FileBlockSource,
    TimelineRow,
    TreeEntry,
    build_timeline,
    filter_timeline,
    format_when,
    image_source,
    mode_string,
    read_bodyfile,
    render_timeline,
    walk_to_bodyfile,
    write_bodyfile,
)

T = 1061428838  # Thu Aug 21 2003 01:20:38 UTC


def expected_image(data, faulty, bs):
    """Byte oracle: zero every faulted block, pad to a full block if any fault occurred."""
    out = bytearray(data)
    for b in faulty:
        out[b * bs:(b + 1) * bs] = bytes(len(out[b * bs:(b + 1) * bs]))
    if faulty and len(out) % bs:
        out += bytes(bs - len(out) % bs)
    return bytes(out)


def test_fault_free_copy(tmp_path):
    data = os.urandom(10_000)
    rep = image_source(FaultySource(data), tmp_path / "img")
    assert rep.bytes_copied == 10_000 and rep.error_blocks == []
    assert (tmp_path / "img").read_bytes() == data


def test_faulty_middle_block(tmp_path):
    data = os.urandom(3 * 4096)
    rep = image_source(FaultySource(data, {1}), tmp_path / "img")
    out = (tmp_path / "img").read_bytes()
    assert rep.error_blocks == [(4096, 4096)]
    assert out[4096:8192] == bytes(4096)
    assert out[:4096] == data[:4096] and out[8192:] == data[8192:]


def test_block_size_zero(tmp_path):
    with pytest.raises(ValueError):
        image_source(FaultySource(b"abc"), tmp_path / "img", block_size=0)


def test_notrunc_keeps_trailing_dest_bytes(tmp_path):
    dest = tmp_path / "img"
    dest.write_bytes(b"Z" * 100)
    image_source(FaultySource(b"a" * 40), dest, block_size=16)
    assert dest.read_bytes() == b"a" * 40 + b"Z" * 60


def test_unwritable_dest_fails_before_reading(tmp_path):
    src = FaultySource(b"abc")
    with pytest.raises(OSError):
        image_source(src, tmp_path / "no" / "such" / "dir" / "img")
    assert src.reads == []


def test_file_block_source_roundtrip(tmp_path):
    data = os.urandom(9000)
    (tmp_path / "src").write_bytes(data)
    with FileBlockSource(tmp_path / "src") as src:
        rep = image_source(src, tmp_path / "img", block_size=1000)
    assert rep.bytes_copied == 9000 and (tmp_path / "img").read_bytes() == data


@settings(max_examples=50)
@given(st.binary(max_size=3000), st.integers(1, 700), st.data())
def test_random_faults_match_oracle(tmp_path_factory, data, bs, draw):
    nblocks = -(-len(data) // bs)
    faulty = draw.draw(st.sets(st.integers(0, max(nblocks - 1, 0)), max_size=nblocks)) if nblocks else set()
    dest = tmp_path_factory.mktemp("img") / "out"
    rep = image_source(FaultySource(data, faulty, bs), dest, block_size=bs)
    want = expected_image(data, sorted(faulty), bs)
    assert dest.read_bytes() == want
    assert rep.error_blocks == [(b * bs, bs) for b in sorted(faulty)]
    assert rep.bytes_copied == len(want)


def test_bodyfile_for_small_tree(tmp_path):
    (tmp_path / "dir").mkdir()
    (tmp_path / "a.txt").write_text("aa")
    (tmp_path / "dir" / "b.txt").write_text("bbb")
    recs = walk_to_bodyfile(tmp_path, "C:/")
    assert [r.name for r in recs] == ["C:/a.txt", "C:/dir", "C:/dir/b.txt"]
    a = recs[0]
    st_a = os.lstat(tmp_path / "a.txt")
    assert (a.size, a.inode, a.mtime) == (2, st_a.st_ino, int(st_a.st_mtime))
    assert recs[1].mode.startswith("d/")
    assert all(len(r.dumps().split("|")) == 11 for r in recs)


def test_empty_tree(tmp_path):
    assert walk_to_bodyfile(tmp_path) == []


def test_hashing_tree(tmp_path):
    from ihrs.forensics import DirectoryTree
    (tmp_path / "x").write_bytes(b"abc")
    [rec] = walk_to_bodyfile(DirectoryTree(tmp_path, hash_files=True))
    assert rec.hash == "900150983cd24fb0d6963f7d28e17f72"


class FixtureTree:
    def __init__(self, entries):
        self._entries = entries

    def entries(self):
        return iter(self._entries)


def test_deleted_and_unreadable_entries():
    live = os.stat_result((stat.S_IFREG | 0o777, 12, 0, 1, 0, 0, 512, T, T, T))
    tree = FixtureTree([TreeEntry("file1.dat", live), TreeEntry("_ILE5.DAT", live, deleted=True),
                        TreeEntry("locked", None)])
    recs = walk_to_bodyfile(tree, "/")
    assert [r.name for r in recs] == ["/_ILE5.DAT (deleted)", "/file1.dat", "/locked"]
    assert recs[1].mode == "-/rwxrwxrwx"
    locked = recs[2]
    assert (locked.size, locked.atime, locked.mtime, locked.ctime) == (0, 0, 0, 0)


def test_mode_string():
    assert mode_string(stat.S_IFDIR | 0o755) == "d/rwxr-xr-x"


names = st.text(st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=20)
times = st.one_of(st.just(0), st.integers(1, 2_000_000_000))
records = st.builds(
    BodyRecord, name=names, hash=st.sampled_from(["0", "d41d8cd98f00b204e9800998ecf8427e"]),
    inode=st.integers(0, 10**9), mode=st.sampled_from(["-/rwxrwxrwx", "d/r-xr-xr-x"]),
    uid=st.integers(0, 65535), gid=st.integers(0, 65535), size=st.integers(0, 10**12),
    atime=times, mtime=times, ctime=times, crtime=times,
)


@given(st.lists(records, max_size=10))
def test_bodyfile_roundtrip(recs):
    assert read_bodyfile(write_bodyfile(recs)) == recs


def test_sample_timeline():
    f1 = BodyRecord("/file1.dat", inode=4, mode="-/rwxrwxrwx", size=512, mtime=T, ctime=T, atime=T + 138)
    f3 = BodyRecord("/file3.dat", inode=8, mode="-/rwxrwxrwx", size=900, mtime=T, ctime=T, atime=T)
    deleted = BodyRecord("/_ILE5.DAT (deleted)", inode=12, mode="-/rwxrwxrwx", size=512,
                         mtime=T + 58, ctime=T + 58)
    rows = build_timeline([f3, deleted, f1])
    assert [(r.when, r.activity, r.name) for r in rows] == [
        (T, "m.c.", "/file1.dat"),
        (T, "mac.", "/file3.dat"),
        (T + 58, "m.c.", "/_ILE5.DAT (deleted)"),
        (T + 138, ".a..", "/file1.dat"),
    ]
    text = render_timeline(rows).splitlines()
    assert text[0].startswith("Thu Aug 21 2003 01:20:38      512 m.c. -/rwxrwxrwx")
    assert text[0].endswith("/file1.dat")
    assert text[1].startswith(" " * 24) and text[1].endswith("/file3.dat")
    assert text[3].startswith("Thu Aug 21 2003 01:22:56")


def test_format_when():
    assert format_when(T) == "Thu Aug 21 2003 01:20:38"


def test_zero_times_give_no_rows():
    assert build_timeline([BodyRecord("/x")]) == []


def test_range_is_half_open():
    day = 86400
    d0 = 1_000_000_000 - 1_000_000_000 % day
    recs = [BodyRecord(f"/f{i}", mtime=d0 + i * day) for i in range(5)]
    rows = build_timeline(recs, d0 + day, d0 + 3 * day)
    assert [r.name for r in rows] == ["/f1", "/f2"]


def test_date_bounds_are_utc_midnights():
    recs = [BodyRecord("/before", mtime=T - 2 * 3600), BodyRecord("/on", mtime=T),
            BodyRecord("/next", mtime=T + 86400)]
    rows = build_timeline(recs, date(2003, 8, 21), date(2003, 8, 22))
    assert [r.name for r in rows] == ["/on"]


def test_from_after_to_is_error():
    with pytest.raises(ValueError):
        build_timeline([], date(2003, 9, 1), date(2003, 8, 1))


def test_filter_timeline():
    rows = build_timeline([BodyRecord("/dev/x", mtime=5), BodyRecord("/etc/y", mtime=6)])
    assert [r.name for r in filter_timeline(rows, "/dev")] == ["/dev/x"]
    assert filter_timeline(rows, "") == rows
    assert filter_timeline(rows, "zzz") == []


def test_row_needs_activity():
    with pytest.raises(ValueError):
        TimelineRow(1, 0, "....", "-/---------", 0, 0, 0, "/x")


small_times = st.one_of(st.just(0), st.integers(1, 20))


@settings(max_examples=100)
@given(st.lists(st.builds(BodyRecord, name=st.sampled_from(["/a", "/b", "/c/d", "/e"]),
                          atime=small_times, mtime=small_times, ctime=small_times, crtime=small_times),
                max_size=100),
       st.one_of(st.none(), st.integers(0, 21)), st.one_of(st.none(), st.integers(0, 21)))
def test_timeline_matches_brute_force(recs, lo, hi):
    if lo is not None and hi is not None and lo > hi:
        lo, hi = hi, lo
    rows = build_timeline(recs, lo, hi)
    assert [astuple(r) for r in rows] == timeline_rows(recs, lo, hi)
    assert rows == build_timeline(recs, lo, hi)

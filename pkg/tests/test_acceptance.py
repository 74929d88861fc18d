"""Acceptance criteria, one test each.

Every test prints a single ``[PASS]``/``[FAIL]`` line; the lines are repeated
in the terminal summary so they show up without ``-s``.
"""

import functools
import io
import os
import random
import time
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from fakes import FaultySource, InstrumentedChannel
from oracles import cron_next, diff_snapshots, make_tree, snapshot, timeline_rows, tree_contents
from ihrs import scenario
from ihrs.alerts import extract_offenders, parse_alert_log
from ihrs.backup import enumerate_tree, execute_sync, plan_sync
from ihrs.cli import run_cli
from ihrs.forensics import BodyRecord, build_timeline, image_source, render_timeline
from ihrs.incidents import IncidentStore, correlate
from ihrs.integrity import BaselineError, check, init_baseline, loads, severity_triage
from ihrs.malware import EXIT_CANT_OPEN, EXIT_CLEAN, EXIT_INFECTED, Signature, SignatureDb, scan_path
from ihrs.response import Blocklist
from ihrs.scheduler import NeverFires, next_fire, parse_cron

RESULTS: list[str] = []
UTC = timezone.utc


def criterion(number, title):
    """Run the test body, print and record one status line, re-raise on failure."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                note = fn(*args, **kwargs)
            except BaseException as exc:
                line = f"[FAIL] C{number} {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
                RESULTS.append(line)
                print(line)
                raise
            line = f"[PASS] C{number} {title} ({note}; {time.perf_counter() - t0:.2f} s)"
            RESULTS.append(line)
            print(line)
        return run
    return wrap


def within(seconds, fn, *args):
    t0 = time.perf_counter()
    result = fn(*args)
    elapsed = time.perf_counter() - t0
    assert elapsed < seconds, f"took {elapsed:.2f} s, limit {seconds} s"
    return result, elapsed


# -- 1 ----------------------------------------------------------------------

ATTACKER = "203.0.113.7"
VICTIM = "192.168.45.203"
DROP = "iptables -A INPUT -s {} -p icmp --icmp-type echo-request -m length --length 1500:65535 -j DROP"


def blocking_log():
    lines = []
    for i in range(20):
        lines.append(f"04/27-15:{i:02d}:00.000000 [**] [122:1:1] (portscan) TCP Portscan [**] "
                     f"[Classification: Attempted Information Leak] [Priority: 2] {{TCP}} {ATTACKER} -> {VICTIM}")
        lines.append(f"04/27-15:{i:02d}:30.000000 [**] [1:100:1] ICMP flood detected [**] "
                     f"[Classification: Denial of service] [Priority: 2] {{ICMP}} {ATTACKER} -> {VICTIM}")
        # Noise from the protected host itself; it would classify as a scan if not allowlisted.
        lines.append(f"04/27-15:{i:02d}:45.000000 [**] [1:469:3] ICMP PING NMAP scan [**] "
                     f"[Classification: Attempted Information Leak] [Priority: 2] {{ICMP}} {VICTIM} -> {ATTACKER}")
    return "\n".join(lines) + "\n"


@criterion(1, "blocking scenario")
def test_c1_blocking_scenario(tmp_path):
    (tmp_path / "alerts.ids").write_text(blocking_log())
    (tmp_path / "ihrs.conf").write_text(
        f"data_dir = state\nalerts_log = alerts.ids\nallowlist = {VICTIM}, 127.0.0.1\n")
    out = io.StringIO()
    code, elapsed = within(1.0, run_cli, ["--config", str(tmp_path / "ihrs.conf"), "respond",
                                          "--now", "2009-04-27T16:00:00+00:00"], out)
    assert code == 0
    blocked = Blocklist.load(tmp_path / "state" / "blocklist")
    assert ATTACKER in blocked.entries and VICTIM not in blocked.entries
    assert (tmp_path / "state" / "blocklist").read_text() == f"{ATTACKER}\n"
    printed = out.getvalue().splitlines()
    assert printed[:2] == [DROP.format(ATTACKER), f"route add -host {ATTACKER} reject"]
    # Without the allowlist the noise source would have been blocked too.
    parsed = parse_alert_log(blocking_log().encode(), year=2009)
    assert extract_offenders(parsed, set()).addresses == (VICTIM, ATTACKER)
    assert extract_offenders(parsed, {VICTIM}).allowlist_hits == 1
    return f"blocklist={sorted(blocked.entries)}, allowlisted host spared, {elapsed:.3f} s < 1 s"


# -- 2 ----------------------------------------------------------------------

@criterion(2, "integrity fixed point and detection")
def test_c2_integrity(tmp_path):
    root = tmp_path / "fixture"
    passphrase = "acceptance"

    def scenario_run():
        paths = make_tree(root, 49)
        passwd = root / "etc" / "passwd"
        passwd.parent.mkdir()
        passwd.write_text("root:x:0:0::/root:/bin/sh\n")
        db = init_baseline([root], passphrase, host="fixture")
        assert len(db.records) == 50
        assert not check([root], db)
        db = loads(db.dumps(), passphrase)
        before = snapshot(root)
        with open(passwd, "a") as fh:
            fh.write("toor::0:0::/:/bin/sh\n")
        paths[7].unlink()
        (root / "d3" / "dropped").write_text("new")
        report = check([root], db)
        return report, before, passwd

    (report, before, passwd), elapsed = within(2.0, scenario_run)
    added, removed, modified = diff_snapshots(before, snapshot(root))
    assert report.added == added and report.removed == removed
    assert {m.path: set(m.changed) for m in report.modified} == modified
    assert (len(report.added), len(report.removed), len(report.modified)) == (1, 1, 1)
    [finding] = severity_triage(report, ["passwd", "shadow"])
    assert finding.advice == f"Please replace {passwd} with a clean backed up version"
    return f"modified=1 removed=1 added=1 matches re-hash oracle, {elapsed:.2f} s < 2 s"


# -- 3 ----------------------------------------------------------------------

MARK = b"\xeb\xfeACCEPT-SIG"
SIG_DB = SignatureDb(1, datetime(2024, 1, 1, tzinfo=UTC), (Signature("Accept.Test", MARK),))


def unprivileged_reader(path):
    """Open as an unprivileged user would: refuse files with no read permission bits."""
    if not os.stat(path).st_mode & 0o444:
        raise PermissionError(13, "Permission denied", path)
    return open(path, "rb")


@criterion(3, "scanner exit-code trichotomy")
def test_c3_exit_codes(tmp_path_factory):
    cases = {"passed": 0, EXIT_CLEAN: 0, EXIT_INFECTED: 0, EXIT_CANT_OPEN: 0}

    @settings(max_examples=100, derandomize=True, database=None, deadline=None,
              suppress_health_check=list(HealthCheck))
    @given(st.lists(st.tuples(st.sampled_from(["clean", "infected", "locked"]),
                              st.binary(max_size=64), st.integers(0, 2)), max_size=12))
    def prop(files):
        root = tmp_path_factory.mktemp("scan")
        for i, (kind, filler, depth) in enumerate(files):
            p = root.joinpath(*[f"d{j}" for j in range(depth)], f"f{i}")
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_bytes(filler + (MARK if kind == "infected" else b"") + filler)
            if kind == "locked":
                p.chmod(0o000)
        report = scan_path(root, SIG_DB, recursive=True, reader=unprivileged_reader)
        kinds = [k for k, _, _ in files]
        infected = "infected" in kinds
        want = EXIT_INFECTED if infected else EXIT_CANT_OPEN if "locked" in kinds else EXIT_CLEAN
        assert report.exit_code == want
        assert len(report.infected) == kinds.count("infected")
        assert len(report.unreadable) == kinds.count("locked")
        cases["passed"] += 1
        cases[want] += 1

    prop()
    assert cases["passed"] >= 100
    return (f"{cases['passed']}/{cases['passed']} cases; code 0 x{cases[EXIT_CLEAN]}, "
            f"1 x{cases[EXIT_INFECTED]}, 54 x{cases[EXIT_CANT_OPEN]}")


# -- 4 ----------------------------------------------------------------------

T_SAMPLE = 1061428838  # Thu Aug 21 2003 01:20:38 UTC


@criterion(4, "timeline oracle equivalence")
def test_c4_timeline():
    rng = random.Random(4)
    base = T_SAMPLE

    def stamp():
        return 0 if rng.random() < 0.25 else base + rng.randrange(0, 5000)

    records = []
    for i in range(1000):
        t = stamp()
        # Half the records share mtime and ctime, like a freshly written file.
        m, c = (t, t) if i % 2 else (t, stamp())
        records.append(BodyRecord(
            f"/dir{rng.randrange(20)}/file{rng.randrange(200)}.dat", inode=rng.randrange(10**6),
            mode=rng.choice(["-/rwxrwxrwx", "d/rwxr-xr-x", "-/rw-r--r--"]), uid=rng.randrange(3),
            gid=rng.randrange(3), size=rng.randrange(10**6), atime=stamp(), mtime=m, ctime=c, crtime=stamp(),
        ))
    rows, elapsed = within(1.0, build_timeline, records)
    want = timeline_rows(records)
    got = [(r.when, r.size, r.activity, r.mode, r.uid, r.gid, r.inode, r.name) for r in rows]
    assert got == want

    f1 = BodyRecord("/file1.dat", inode=4, mode="-/rwxrwxrwx", size=512,
                    mtime=T_SAMPLE, ctime=T_SAMPLE, atime=T_SAMPLE + 138)
    sample = build_timeline([f1])
    assert [(r.when, r.activity) for r in sample] == [(T_SAMPLE, "m.c."), (T_SAMPLE + 138, ".a..")]
    first = render_timeline(sample).splitlines()[0]
    assert first.startswith("Thu Aug 21 2003 01:20:38") and " m.c. -/rwxrwxrwx " in first
    return f"{len(rows)} rows equal the oracle row-for-row, sample merge ok, build {elapsed:.3f} s < 1 s"


# -- 5 ----------------------------------------------------------------------

@criterion(5, "imaging fault injection")
def test_c5_imaging(tmp_path):
    rng = random.Random(5)
    passed = 0
    for case in range(100):
        bs = rng.choice([512, 1000, 4096])
        data = rng.randbytes(rng.randrange(1, 12 * bs))
        nblocks = -(-len(data) // bs)
        faulty = sorted(rng.sample(range(nblocks), rng.randrange(0, nblocks + 1)))
        dest = tmp_path / f"img{case}"
        prefill = rng.randbytes(len(data) + 2 * bs)
        dest.write_bytes(prefill)
        report = image_source(FaultySource(data, faulty, bs), dest, block_size=bs)
        out = dest.read_bytes()
        assert report.error_blocks == [(b * bs, bs) for b in faulty]
        for b in range(nblocks):
            chunk = slice(b * bs, min((b + 1) * bs, len(data)))
            assert out[chunk] == (bytes(chunk.stop - chunk.start) if b in faulty else data[chunk])
        copied = nblocks * bs if faulty else len(data)
        assert report.bytes_copied == copied
        assert out[copied:] == prefill[copied:], "destination was truncated"
        assert len(out) == len(prefill)
        passed += 1
    return f"{passed}/100 randomized cases"


# -- 6 ----------------------------------------------------------------------

RANGES = ((0, 59), (0, 23), (1, 31), (1, 12), (0, 6))


def random_field(rng, lo, hi):
    kind = rng.random()
    if kind < 0.3:
        return "*"
    if kind < 0.45:
        return f"*/{rng.randrange(1, hi - lo + 2)}"
    items = []
    for _ in range(rng.randrange(1, 4)):
        a = rng.randrange(lo, hi + 1)
        if rng.random() < 0.4:
            b = rng.randrange(a, hi + 1)
            step = f"/{rng.randrange(1, 6)}" if rng.random() < 0.3 else ""
            items.append(f"{a}-{b}{step}")
        else:
            items.append(str(a))
    return ",".join(items)


def minute_scan(spec_text, after, limit_days):
    """Pure minute-by-minute scan for the two fixed schedules."""
    minute, hour, _, _, dow = spec_text.split()
    t = after.replace(second=0, microsecond=0) + timedelta(minutes=1)
    for _ in range(limit_days * 1440):
        weekday = (t.weekday() + 1) % 7
        if t.minute == int(minute) and t.hour == int(hour) and (dow == "*" or weekday == int(dow)):
            return t
        t += timedelta(minutes=1)
    return None


def oracle_next(spec, after):
    return cron_next(spec.minute, spec.hour, spec.dom, spec.month, spec.dow, spec.dom_wild, spec.dow_wild, after)


@criterion(6, "cron oracle equivalence")
def test_c6_cron():
    rng = random.Random(6)
    t0 = time.perf_counter()
    agreed = never = 0
    for _ in range(500):
        expr = " ".join(random_field(rng, lo, hi) for lo, hi in RANGES)
        spec = parse_cron(expr)
        after = datetime(2000, 1, 1) + timedelta(minutes=rng.randrange(40 * 365 * 1440))
        want = oracle_next(spec, after)
        try:
            got = next_fire(spec, after)
        except NeverFires:
            got = None
        if want is None:
            assert got is None or got - after > timedelta(days=4 * 365), expr
            never += 1
        else:
            assert got == want, f"{expr!r} after {after}: {got} != {want}"
        agreed += 1
    literals = 0
    for text in ("00 12 * * *", "00 17 * * 5"):
        for after in (datetime(2024, 1, 1, 11, 0), datetime(2024, 1, 5, 17, 0), datetime(2024, 2, 29, 23, 59),
                      datetime(2023, 12, 31, 12, 0)):
            spec = parse_cron(text)
            assert next_fire(spec, after) == minute_scan(text, after, 8) == oracle_next(spec, after)
            literals += 1
    assert next_fire(parse_cron("00 17 * * 5"), datetime(2024, 1, 5, 17, 0)) == datetime(2024, 1, 12, 17, 0)
    elapsed = time.perf_counter() - t0
    assert elapsed < 10, f"took {elapsed:.2f} s"
    return f"{agreed}/500 random specs agree ({never} never fire in 4 y), {literals} literal checks, {elapsed:.2f} s < 10 s"


# -- 7 ----------------------------------------------------------------------

@criterion(7, "baseline tamper detection")
def test_c7_tamper(tmp_path):
    make_tree(tmp_path, 20)
    sealed = init_baseline([tmp_path], "passphrase", host="box").dumps()
    assert loads(sealed, "passphrase").dumps() == sealed
    rng = random.Random(7)
    rejected = 0
    for _ in range(200):
        data = bytearray(sealed)
        data[rng.randrange(len(data))] ^= rng.randrange(1, 256)
        with pytest.raises(BaselineError):
            loads(bytes(data), "passphrase")
        rejected += 1
    return f"{rejected}/200 single-byte flips rejected"


# -- 8 ----------------------------------------------------------------------

def random_tree(rng, root):
    root.mkdir(parents=True, exist_ok=True)
    for i in range(rng.randrange(0, 12)):
        depth = rng.randrange(0, 3)
        p = root.joinpath(*[f"dir{rng.randrange(3)}" for _ in range(depth)], f"file{i}")
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_bytes(rng.randbytes(rng.randrange(0, 300)))
        mtime = rng.randrange(1_000_000_000, 1_700_000_000)
        os.utime(p, (mtime, mtime))


@criterion(8, "backup convergence")
def test_c8_backup(tmp_path):
    rng = random.Random(8)
    converged = 0
    sealed_files = 0
    for case in range(100):
        src, dst = tmp_path / f"src{case}", tmp_path / f"dst{case}"
        random_tree(rng, src)
        channel = InstrumentedChannel(dst)
        if rng.random() < 0.5:
            # Partially populated destination with stale and outdated files.
            random_tree(rng, dst)
        plan = plan_sync(enumerate_tree(src), enumerate_tree(dst), mirror=True)
        report = execute_sync(plan, src, channel)
        assert report.ok
        assert not plan_sync(enumerate_tree(src), enumerate_tree(dst), mirror=True)
        assert tree_contents(dst) == tree_contents(src)
        assert len(channel.transmitted) == len(plan.to_send) == len(channel.plaintexts)
        for plain, wire in zip(channel.plaintexts, channel.transmitted):
            assert wire == bytes(b ^ InstrumentedChannel.KEY for b in plain)
        sealed_files += len(channel.transmitted)
        converged += 1
    return f"{converged}/100 trees converge, {sealed_files} transfers all sealed"


# -- 9 ----------------------------------------------------------------------

def run_scenario(root: Path):
    site = scenario.build_site(root)
    out = io.StringIO()
    code = run_cli(["--config", str(site.config), "schedule", "--once", "--now", scenario.NOW.isoformat()], out)
    store = IncidentStore(root / "state" / "incidents.log")
    return site, code, out.getvalue(), store


@criterion(9, "end-to-end pipeline")
def test_c9_end_to_end(tmp_path):
    site, code, out, store = run_scenario(tmp_path / "run1")
    assert code == 0, out
    records = store.records()
    modules = {r.source_module for r in records}
    assert len(modules) >= 3
    incidents = correlate(store, timedelta(hours=1))
    assert incidents
    assert str(site.critical_file) in {c.key for c in incidents}

    _, code2, out2, store2 = run_scenario(tmp_path / "run2")
    assert code2 == 0
    first = store.path.read_text().replace(str(tmp_path / "run1"), "<root>")
    second = store2.path.read_text().replace(str(tmp_path / "run2"), "<root>")
    assert first == second
    assert out.replace(str(tmp_path / "run1"), "") == out2.replace(str(tmp_path / "run2"), "")
    return (f"{len(records)} records from {sorted(modules)}, {len(incidents)} correlated "
            f"({', '.join(os.path.basename(c.key) for c in incidents)}), identical across runs")

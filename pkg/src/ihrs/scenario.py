"""A self-contained demo site for end-to-end runs.

``build_site`` lays out an alert log, a watched tree with its sealed
baseline, a signature database, fake system binaries with a manifest, a
login-record fixture, a backup source and a crontab, then plants the
incident: an attacker in the alert log, a critical file that is both
modified and infected, a dropped malware file and a trojaned binary.
"""

from __future__ import annotations

import os
import socket
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import integrity, malware, rootkit
from .scheduler import DEFAULT_CRONTAB

ATTACKER = "10.10.10.66"
SECOND_ATTACKER = "172.16.4.20"
VICTIM = "192.168.45.203"
PASSPHRASE = "correct horse battery staple"
MARKER = b"IHRS-DEMO-SIGNATURE:\x90\x90\xcc\xcc"
NOW = datetime(2009, 4, 27, 12, 0, tzinfo=timezone.utc)
BASE_MTIME = 1_230_000_000


def alert_log(attacker: str = ATTACKER, victim: str = VICTIM) -> str:
    return "\n".join([
        f"04/27-15:05:00.000000 [**] [122:1:1] (portscan) TCP Portscan [**] [Classification: Attempted Information Leak] [Priority: 2] {{TCP}} {attacker} -> {victim}",
        f"04/27-15:05:01.000000 [**] [1:100:1] ICMP flood detected [**] [Classification: Denial of service] [Priority: 2] {{ICMP}} {attacker} -> {victim}",
        f"04/27-15:05:02.000000 [**] [1:1418:11] SNMP request tcp [**] [Classification: Attempted Information Leak] [Priority: 2] {{TCP}} {SECOND_ATTACKER}:33100 -> {victim}:161",
        f"04/27-15:05:03.000000 [**] [1:408:5] ICMP Echo Reply [**] [Classification: Misc activity] [Priority: 3] {{ICMP}} {victim} -> {attacker}",
        "this line is not an alert",
        f"04/27-15:05:04.000000 [**] [1:9999:1] heartbeat [**] [Priority: 4] {{UDP}} 10.0.0.9:5000 -> {victim}:5000",
    ]) + "\n"


@dataclass
class Site:
    root: Path
    config: Path
    watched: Path
    critical_file: Path
    dropper: Path
    bin_root: Path


def _write(path: Path, data: bytes, mtime: int = BASE_MTIME) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    os.utime(path, (mtime, mtime))
    return path


def build_site(root: str | os.PathLike, now: datetime = NOW, plant: bool = True) -> Site:
    root = Path(root)
    state = root / "state"
    state.mkdir(parents=True, exist_ok=True)
    (root / "alerts.ids").write_text(alert_log())

    watched = root / "watched"
    critical = _write(watched / "etc" / "passwd", b"root:x:0:0:root:/root:/bin/sh\n")
    _write(watched / "etc" / "hosts", b"127.0.0.1 localhost\n")
    for i in range(8):
        _write(watched / "srv" / f"page{i}.html", f"<p>page {i}</p>\n".encode())
    (root / "severity_levels.txt").write_text("# critical files\npasswd\nshadow\nsshd\n")
    (root / "passphrase").write_text(PASSPHRASE + "\n")

    db = malware.SignatureDb(7, now, (malware.Signature("Demo.Backdoor", MARKER),))
    (root / "signatures.db").write_bytes(db.dumps())

    bin_root = root / "sysroot"
    for name in ("ls", "ps", "sshd", "grep", "find"):
        _write(bin_root / "bin" / name, f"#!/bin/sh\n# genuine {name}\n".encode())
    (root / "rootkit.manifest").write_text(rootkit.build_manifest(bin_root, ["ls", "ps", "sshd", "grep", "find"]).dumps())
    (root / "wtmp.txt").write_text("alice|pts/0|10.0.0.2|1230000000\n|||0\nbob|pts/1|10.0.0.3|1230000600\n")
    (root / "interfaces.txt").write_text("lo UP,LOOPBACK\neth0 UP,BROADCAST\n")

    _write(root / "backup-src" / "notes.txt", b"weekly notes\n")
    _write(root / "backup-src" / "photos" / "img001.jpg", b"\xff\xd8demo\xff\xd9")
    (root / "crontab").write_text(DEFAULT_CRONTAB)

    config = root / "ihrs.conf"
    config.write_text("\n".join([
        "data_dir = state",
        "alerts_log = alerts.ids",
        f"allowlist = {VICTIM}, 127.0.0.1",
        "integrity_roots = watched",
        "passphrase_file = passphrase",
        "severity_list = severity_levels.txt",
        "scan_roots = watched",
        "signature_db = signatures.db",
        "manifest = rootkit.manifest",
        "binaries_root = sysroot",
        "login_records = wtmp.txt",
        "interfaces = interfaces.txt",
        "backup_src = backup-src",
        "backup_dest = backup-dest",
        "crontab = crontab",
        "correlation_window = 3600",
    ]) + "\n")

    base = integrity.init_baseline([watched], PASSPHRASE, host=socket.gethostname(), created_at=now,
                                   salt=b"\x00" * 16)
    base.save(state / "tripwire")

    dropper = watched / "tmp" / "dropper.bin"
    if plant:
        _write(critical, b"root:x:0:0:root:/root:/bin/sh\ntoor::0:0::/:/bin/sh\n" + MARKER + b"\n",
               BASE_MTIME + 3600)
        _write(dropper, b"\x7fELF" + MARKER + b"payload")
        _write(bin_root / "bin" / "ps", b"#!/bin/sh\n# trojaned ps hides pid 31337\n")
    return Site(root, config, watched, critical, dropper, bin_root)

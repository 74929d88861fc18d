"""Config-driven jobs tying the detectors to the incident store.

Each job logs what it found to the incident store with the given
observation time, so a scheduled run is reproducible when ``now`` is fixed.
"""

from __future__ import annotations

import json
import logging
import os
import socket
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable

from . import alerts, backup, integrity, malware, response, rootkit
from .config import Config
from .incidents import IncidentStore, infections, integrity_findings
from .scheduler import DEFAULT_CRONTAB, Job, load_crontab, load_crontab_file
from .util import atomic_write, iso, parse_iso

log = logging.getLogger(__name__)


class TaskError(RuntimeError):
    pass


def get_passphrase(cfg: Config) -> str:
    if cfg.passphrase_file:
        return Path(cfg.passphrase_file).read_text().rstrip("\n")
    env = os.environ.get("IHRS_PASSPHRASE")
    if env:
        return env
    raise TaskError("no passphrase: set passphrase_file in the config or IHRS_PASSPHRASE")


def baseline_path(cfg: Config, host: str | None = None) -> Path:
    return Path(cfg.baseline_dir) / f"{host or socket.gethostname()}.twd"


def severity_list(cfg: Config) -> list[str]:
    p = Path(cfg.severity_list)
    return integrity.load_severity_list(p) if p.exists() else []


@dataclass
class RespondResult:
    skipped_lines: int
    offenders: alerts.OffenderSet
    plan: list[response.ResponseAction]
    report: response.BlockReport
    blocklist: response.Blocklist


def respond(cfg: Config, now: datetime, alerts_path: str | None = None,
            actuator: response.Actuator | None = None, execute: bool | None = None) -> RespondResult:
    path = alerts_path or cfg.alerts_log
    with open(path, "rb") as fh:
        parsed = alerts.parse_alert_log(fh, year=now.year)
    offenders = alerts.extract_offenders(parsed.alerts, cfg.allowlist)
    blocklist = response.Blocklist.load(cfg.blocklist)
    plan = response.plan_block(offenders.addresses, blocklist)
    if actuator is None:
        run_live = cfg.execute_blocks if execute is None else execute
        actuator = response.ShellActuator() if run_live else response.DryRunActuator()
    report = response.apply(plan, actuator, blocklist)
    blocklist.save(cfg.blocklist)
    executed = [a for a, ok in report.outcomes if ok]
    IncidentStore(cfg.incident_store).record_many(executed, now)
    return RespondResult(parsed.skipped, offenders, plan, report, blocklist)


def integrity_init(cfg: Config, now: datetime, roots=None) -> tuple[integrity.BaselineDb, Path]:
    db = integrity.init_baseline(roots or cfg.integrity_roots, get_passphrase(cfg), created_at=now)
    return db, db.save(cfg.baseline_dir)


@dataclass
class IntegrityResult:
    report: integrity.IntegrityReport
    critical: list[integrity.CriticalFinding]
    report_path: Path


def integrity_check(cfg: Config, now: datetime, roots=None, paranoid: bool = False) -> IntegrityResult:
    db = integrity.load(baseline_path(cfg), get_passphrase(cfg))
    report = integrity.check(roots or cfg.integrity_roots, db, paranoid=paranoid)
    critical = integrity.severity_triage(report, severity_list(cfg))
    path = integrity.write_report(report, cfg.reports_dir, db.host, now)
    IncidentStore(cfg.incident_store).record_many(integrity_findings(report) + critical, now)
    return IntegrityResult(report, critical, path)


def integrity_update(cfg: Config, now: datetime, approved, roots=None) -> integrity.BaselineDb:
    passphrase = get_passphrase(cfg)
    db = integrity.load(baseline_path(cfg), passphrase)
    report = integrity.check(roots or cfg.integrity_roots, db)
    if approved is None:
        approved = report.paths()
    new = integrity.update_baseline(db, report, approved, passphrase, created_at=now)
    new.save(cfg.baseline_dir)
    return new


@dataclass
class ScanResult:
    report: malware.ScanReport
    remediation: malware.RemediationReport
    update: malware.UpdateResult | None = None
    update_error: str | None = None


def antivirus(cfg: Config, now: datetime, roots=None, recursive: bool = True, delete: bool = False,
              fetcher: malware.Fetcher | None = None, update: bool = True) -> ScanResult:
    upd = err = None
    db_path = Path(cfg.signature_db)
    if cfg.update_config:
        ucfg = malware.load_update_config(cfg.update_config)
        if update:
            try:
                upd = malware.update_db(ucfg, fetcher or malware.UrlFetcher())
            except malware.UpdateFailed as exc:
                err = str(exc)
                log.error("%s", exc)
        managed = Path(ucfg.database_dir) / malware.DB_FILENAME
        if managed.exists():
            db_path = managed
    db = malware.SignatureDb.load(db_path)
    total = malware.ScanReport()
    for root in roots or cfg.scan_roots:
        if not os.path.lexists(root):
            log.warning("scan root %s does not exist", root)
            continue
        r = malware.scan_path(root, db, recursive)
        total.scanned += r.scanned
        total.infected += r.infected
        total.unreadable += r.unreadable
    malware.write_infected_list(total, cfg.infected_list)
    Path(cfg.quarantine_dir).mkdir(parents=True, exist_ok=True)
    rem = malware.remediate(total, severity_list(cfg), cfg.quarantine_dir, delete=delete, now=now)
    IncidentStore(cfg.incident_store).record_many(infections(total), now)
    return ScanResult(total, rem, upd, err)


@dataclass
class RootkitResult:
    findings: list[rootkit.AuditFinding]
    outcome: rootkit.AlertOutcome


def rootkit_audit(cfg: Config, now: datetime, manifest: str | None = None, root: str | None = None,
                  mailer: rootkit.Mailer | None = None) -> RootkitResult:
    m = rootkit.BinaryManifest.load(manifest or cfg.manifest)
    findings = rootkit.check_binaries(m, root or cfg.binaries_root)
    if cfg.login_records:
        findings += rootkit.check_login_records(rootkit.load_login_records(cfg.login_records))
    if cfg.interfaces:
        findings += rootkit.check_interfaces(rootkit.fixture_interfaces(cfg.interfaces))
    outcome = rootkit.alert_admin(findings, mailer or rootkit.SpoolMailer(cfg.mail_spool))
    IncidentStore(cfg.incident_store).record_many(findings, now)
    return RootkitResult(findings, outcome)


def channel_for(dest: str) -> backup.LoopbackChannel:
    if dest.startswith("file://"):
        return backup.LoopbackChannel(dest[len("file://"):])
    if "://" in dest or (":" in dest and not dest.startswith("/")):
        raise TaskError(f"no transport for {dest!r}; only local and file:// destinations are supported")
    return backup.LoopbackChannel(dest)


def run_backup(cfg: Config, now: datetime, src: str | None = None, dest: str | None = None,
               mirror: bool | None = None, checksum: bool = False) -> tuple[backup.SyncPlan, backup.SyncReport]:
    src = src or cfg.backup_src
    dest = dest or cfg.backup_dest
    if not src or not dest:
        raise TaskError("backup needs a source and a destination")
    mirror = cfg.backup_mirror if mirror is None else mirror
    channel = channel_for(dest)
    plan = backup.plan_sync(backup.enumerate_tree(src, checksum), backup.enumerate_tree(channel.root, checksum),
                            mirror=mirror, checksum=checksum)
    report = backup.execute_sync(plan, src, channel, backup.KnownHosts(cfg.known_hosts))
    return plan, report


TASKS: dict[str, Callable[[Config, datetime], object]] = {
    "respond": respond,
    "integrity": integrity_check,
    "antivirus": antivirus,
    "rootkit": rootkit_audit,
    "backup": run_backup,
}


@dataclass
class TaskExecutor:
    cfg: Config
    now: datetime
    results: dict[str, object] = field(default_factory=dict)

    def run(self, task: str) -> bool:
        fn = TASKS.get(task)
        if fn is None:
            log.error("unknown task %r", task)
            return False
        try:
            self.results[task] = fn(self.cfg, self.now)
        except Exception as exc:
            log.error("task %s failed: %s", task, exc)
            return False
        return True


def load_jobs(cfg: Config, tab: str | None = None) -> list[Job]:
    path = tab or cfg.crontab
    return load_crontab_file(path) if path else load_crontab(DEFAULT_CRONTAB)


def load_state(path: str | Path, jobs: list[Job]) -> None:
    p = Path(path)
    if not p.exists():
        return
    state = json.loads(p.read_text())
    for job in jobs:
        if job.id in state:
            job.last_run = parse_iso(state[job.id])


def save_state(path: str | Path, jobs: list[Job]) -> None:
    state = {j.id: iso(j.last_run) for j in jobs if j.last_run}
    atomic_write(path, (json.dumps(state, indent=2, sort_keys=True) + "\n").encode())

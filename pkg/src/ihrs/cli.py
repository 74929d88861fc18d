"""``ihrs`` command line."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from datetime import datetime, timedelta, timezone
from pathlib import Path
from zoneinfo import ZoneInfo

from . import forensics, integrity, malware, rootkit, scheduler, tasks
from .config import Config, ConfigError, load_config
from .incidents import IncidentStore, StoreError, correlate, render_correlated, render_records
from .util import parse_iso, utcnow

log = logging.getLogger("ihrs")

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_USAGE = 2
EXIT_ERROR = 3


def _now(args) -> datetime:
    return parse_iso(args.now) if getattr(args, "now", None) else utcnow()


def cmd_respond(cfg: Config, args, out) -> int:
    res = tasks.respond(cfg, _now(args), alerts_path=args.alerts, execute=args.execute)
    if res.skipped_lines:
        print(f"# {res.skipped_lines} malformed line(s) skipped", file=sys.stderr)
    for action, ok in res.report.outcomes:
        print(action.rendered if ok else f"# FAILED: {action.rendered}", file=out)
    print("the following addresses have been blocked permanently", file=out)
    for n, addr in enumerate(res.report.blocked, 1):
        print(f"{n:6}\t{addr}", file=out)
    return EXIT_ERROR if res.report.failed else EXIT_OK


def cmd_integrity(cfg: Config, args, out) -> int:
    now = _now(args)
    roots = args.root or None
    if args.mode == "init":
        db, path = tasks.integrity_init(cfg, now, roots)
        for w in db.warnings:
            print(f"warning: {w}", file=sys.stderr)
        print(f"baseline with {len(db.records)} files written to {path}", file=out)
        return EXIT_OK
    if args.mode == "check":
        res = tasks.integrity_check(cfg, now, roots, paranoid=args.paranoid)
        out.write(integrity.render_report(res.report, now))
        for f in res.critical:
            print(f"Critical File: {f.path} modified!", file=out)
            print(f.advice, file=out)
        return EXIT_FINDINGS if res.report else EXIT_OK
    approved = None if args.all else set(args.approve or [])
    db = tasks.integrity_update(cfg, now, approved, roots)
    print(f"baseline updated: {len(db.records)} files", file=out)
    return EXIT_OK


def cmd_scan(cfg: Config, args, out) -> int:
    if args.db:
        cfg.signature_db = args.db
    if not os.path.lexists(args.root):
        print(f"error: scan root {args.root} does not exist", file=sys.stderr)
        return EXIT_USAGE
    res = tasks.antivirus(cfg, _now(args), roots=[args.root], recursive=args.recursive,
                          delete=args.delete, update=args.update)
    for path, sig in res.report.infected:
        print(f"{path}: {sig} FOUND", file=out)
    for path in res.report.unreadable:
        print(f"{path}: Can't open file", file=out)
    for path, advice in res.remediation.advisories:
        print(f"Critical File: {path} infected!", file=out)
        print(advice, file=out)
    for orig, target in res.remediation.quarantined:
        print(f"{orig}: moved to {target}", file=out)
    for path in res.remediation.deleted:
        print(f"{path}: removed", file=out)
    return res.report.exit_code


def cmd_image(cfg: Config, args, out) -> int:
    with forensics.FileBlockSource(args.input) as src:
        rep = forensics.image_source(src, args.output, args.bs)
    print(f"{rep.bytes_copied} bytes copied to {rep.output_path} (bs={rep.block_size})", file=out)
    for off, length in rep.error_blocks:
        print(f"read error: offset {off} length {length} (zero-filled)", file=out)
    return EXIT_FINDINGS if rep.error_blocks else EXIT_OK


def cmd_bodyfile(cfg: Config, args, out) -> int:
    records = forensics.walk_to_bodyfile(forensics.DirectoryTree(args.root, hash_files=args.hash), args.prefix)
    out.write(forensics.write_bodyfile(records))
    return EXIT_OK


def cmd_timeline(cfg: Config, args, out) -> int:
    records = forensics.read_bodyfile_path(args.body)
    start = forensics.parse_date_arg(args.start) if args.start else None
    end = forensics.parse_date_arg(args.end) if args.end else None
    rows = forensics.build_timeline(records, start, end)
    if args.grep is not None:
        rows = forensics.filter_timeline(rows, args.grep)
    out.write(forensics.render_timeline(rows))
    return EXIT_OK


def cmd_rootkit(cfg: Config, args, out) -> int:
    if args.build_manifest:
        m = rootkit.build_manifest(args.root or cfg.binaries_root)
        Path(args.build_manifest).write_text(m.dumps())
        print(f"{len(m.entries)} binaries recorded in {args.build_manifest}", file=out)
        return EXIT_OK
    if args.wtmp:
        cfg.login_records = args.wtmp
    if args.interfaces:
        cfg.interfaces = args.interfaces
    res = tasks.rootkit_audit(cfg, _now(args), manifest=args.manifest, root=args.root)
    for f in res.findings:
        print(f"INFECTED ({f.kind}): {f.subject}: {f.detail}", file=out)
    if res.outcome.delivery_failed:
        print("warning: admin alert could not be delivered", file=sys.stderr)
    if not res.findings:
        print("no possible rootkit infection detected", file=out)
    return res.outcome.status


def _zone(cfg: Config):
    return timezone.utc if cfg.timezone.upper() == "UTC" else ZoneInfo(cfg.timezone)


def cmd_schedule(cfg: Config, args, out) -> int:
    jobs = tasks.load_jobs(cfg, args.tab)
    if args.action == "install":
        out.write(scheduler.install_lines(config=args.config, jobs=jobs))
        return EXIT_OK
    tz = _zone(cfg)
    tasks.load_state(cfg.schedule_state, jobs)
    while True:
        now = _now(args)
        executor = tasks.TaskExecutor(cfg, now)
        report = scheduler.run_due(jobs, now, executor, tz)
        tasks.save_state(cfg.schedule_state, jobs)
        for job_id, ok in report.executed:
            print(f"{now.isoformat()} {job_id}: {'ok' if ok else 'FAILED'}", file=out)
        out.flush()
        if not args.daemon:
            return EXIT_OK if all(ok for _, ok in report.executed) else EXIT_ERROR
        time.sleep(60 - time.time() % 60)


def cmd_run_task(cfg: Config, args, out) -> int:
    executor = tasks.TaskExecutor(cfg, _now(args))
    return EXIT_OK if executor.run(args.task) else EXIT_ERROR


def cmd_backup(cfg: Config, args, out) -> int:
    plan, rep = tasks.run_backup(cfg, _now(args), args.src, args.dest, mirror=args.mirror or None,
                                 checksum=args.checksum)
    print("sending incremental file list", file=out)
    for rel in rep.sent:
        print(rel, file=out)
    for rel in rep.deleted:
        print(f"deleting {rel}", file=out)
    for rel, err in rep.failed:
        print(f"failed: {rel}: {err}", file=sys.stderr)
    print(f"sent {rep.bytes_sent} bytes, {plan.unchanged} unchanged", file=out)
    return EXIT_OK if rep.ok else EXIT_ERROR


def cmd_incidents(cfg: Config, args, out) -> int:
    store = IncidentStore(cfg.incident_store)
    if args.correlate:
        window = timedelta(seconds=args.window or cfg.correlation_window)
        out.write(render_correlated(correlate(store, window)))
    else:
        out.write(render_records(store.records()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ihrs", description="Incident handling and response toolkit.")
    p.add_argument("--config", default=os.environ.get("IHRS_CONFIG"), help="configuration file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=func)
        sp.add_argument("--now", help="override the current time (ISO 8601)")
        return sp

    sp = add("respond", cmd_respond, "block attackers found in an IDS alert log")
    sp.add_argument("--alerts", help="alert log (default: alerts_log from the config)")
    sp.add_argument("--execute", action="store_true", default=None, help="run the rules instead of a dry run")

    sp = add("integrity", cmd_integrity, "baseline, check or update file integrity")
    sp.add_argument("mode", choices=("init", "check", "update"))
    sp.add_argument("--root", action="append", help="tree to track (repeatable)")
    sp.add_argument("--paranoid", action="store_true", help="rehash every file")
    sp.add_argument("--approve", action="append", help="path to fold into the baseline (update)")
    sp.add_argument("--all", action="store_true", help="approve every reported change (update)")

    sp = add("scan", cmd_scan, "scan files for malware signatures")
    sp.add_argument("--root", required=True)
    sp.add_argument("--recursive", "-r", action="store_true")
    sp.add_argument("--delete", action="store_true", help="delete non-critical infected files instead of quarantining")
    sp.add_argument("--db", help="signature database file")
    sp.add_argument("--update", action="store_true", help="update the signature database first")

    sp = add("image", cmd_image, "copy a device or file to an image, tolerating read errors")
    sp.add_argument("--if", dest="input", required=True)
    sp.add_argument("--of", dest="output", required=True)
    sp.add_argument("--bs", type=int, default=4096)

    sp = add("bodyfile", cmd_bodyfile, "write a body file for a directory tree")
    sp.add_argument("--root", required=True)
    sp.add_argument("--prefix", default="/")
    sp.add_argument("--hash", action="store_true", help="include MD5 of regular files")

    sp = add("timeline", cmd_timeline, "render a timeline from a body file")
    sp.add_argument("--body", required=True)
    sp.add_argument("--from", dest="start")
    sp.add_argument("--to", dest="end")
    sp.add_argument("--grep")

    sp = add("rootkit", cmd_rootkit, "check system binaries and login records")
    sp.add_argument("--manifest")
    sp.add_argument("--root")
    sp.add_argument("--wtmp", help="login record fixture")
    sp.add_argument("--interfaces", help="interface flag fixture")
    sp.add_argument("--build-manifest", metavar="OUT", help="record known-good digests and exit")

    sp = add("schedule", cmd_schedule, "run due jobs, or print crontab lines")
    sp.add_argument("action", nargs="?", choices=("run", "install"), default="run")
    sp.add_argument("--tab", help="crontab-style job file")
    mode = sp.add_mutually_exclusive_group()
    mode.add_argument("--once", action="store_true", help="one dispatch pass (default)")
    mode.add_argument("--daemon", action="store_true", help="dispatch every minute")

    sp = add("run-task", cmd_run_task, "run one job now")
    sp.add_argument("task", choices=sorted(tasks.TASKS))

    sp = add("backup", cmd_backup, "incremental backup over a sealed channel")
    sp.add_argument("--src")
    sp.add_argument("--dest")
    sp.add_argument("--mirror", action="store_true")
    sp.add_argument("--checksum", action="store_true")

    sp = add("incidents", cmd_incidents, "show logged incidents")
    sp.add_argument("--correlate", action="store_true")
    sp.add_argument("--window", type=int, help="correlation window in seconds")
    return p


def run_cli(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(cfg, args, out)
    except StoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (tasks.TaskError, integrity.BaselineError, malware.SignatureDbError, malware.UpdateConfigError,
            scheduler.CronParseError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Plant an incident in a demo site and run every scheduled job once.

The site holds an attacker in the IDS alert log, a critical file that was
both edited and infected, a dropped malware sample and a trojaned binary.
After one scheduler pass the script prints the incident log and the
correlated incidents.

    python3 scripts/e2e_scenario.py [--workdir DIR] [--window SECONDS]
"""

import argparse
import io
import tempfile
from datetime import timedelta
from pathlib import Path

from ihrs.cli import run_cli
from ihrs.incidents import IncidentStore, correlate, render_correlated, render_records
from ihrs.scenario import NOW, build_site


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", type=Path)
    ap.add_argument("--window", type=int, default=3600)
    args = ap.parse_args()

    root = args.workdir or Path(tempfile.mkdtemp(prefix="ihrs-e2e-"))
    site = build_site(root)
    out = io.StringIO()
    code = run_cli(["--config", str(site.config), "schedule", "--once", "--now", NOW.isoformat()], out)
    print(out.getvalue(), end="")
    print(f"scheduler exit code: {code}\n")

    store = IncidentStore(root / "state" / "incidents.log")
    records = store.records()
    print(f"incident log ({len(records)} records):")
    print(render_records(records))
    incidents = correlate(records, timedelta(seconds=args.window))
    print(f"correlated incidents ({len(incidents)}):")
    print(render_correlated(incidents), end="")
    print(f"\nsite: {root}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Before/after blocking experiment at desk scale.

An attacker port-scans and ICMP-floods the protected host while the host
itself produces some alert noise. Before ``respond`` runs, every attacker
probe would reach the host; afterwards each one hits a planned DROP/REJECT
rule. Nothing is executed against the real firewall: a dry-run actuator
records the commands.

    python3 scripts/blocking_scenario.py [--workdir DIR] [--probes N]
"""

import argparse
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from ihrs import tasks
from ihrs.config import parse_config
from ihrs.response import DryRunActuator
from ihrs.scenario import ATTACKER, SECOND_ATTACKER, VICTIM, alert_log


def reachable(blocked: set[str], probes: list[str]) -> int:
    return sum(src not in blocked for src in probes)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", type=Path)
    ap.add_argument("--probes", type=int, default=1000, help="probe packets per attacker")
    args = ap.parse_args()

    workdir = args.workdir or Path(tempfile.mkdtemp(prefix="ihrs-block-"))
    workdir.mkdir(parents=True, exist_ok=True)
    (workdir / "alerts.ids").write_text(alert_log())
    cfg = parse_config(f"data_dir = state\nalerts_log = alerts.ids\nallowlist = {VICTIM}, 127.0.0.1\n",
                       base_dir=workdir)
    probes = [ATTACKER, SECOND_ATTACKER] * args.probes

    before = reachable(set(), probes)
    actuator = DryRunActuator()
    res = tasks.respond(cfg, datetime(2009, 4, 27, 16, tzinfo=timezone.utc), actuator=actuator)
    after = reachable(set(res.report.blocked), probes)

    print("planned rules:")
    for cmd in actuator.commands:
        print(f"  {cmd}")
    print(f"blocklist: {Path(cfg.blocklist).read_text().split()}")
    print(f"allowlisted host blocked: {VICTIM in res.report.blocked}")
    print(f"attacker probes reaching {VICTIM}: before={before} after={after} of {len(probes)}")
    print(f"workdir: {workdir}")


if __name__ == "__main__":
    main()

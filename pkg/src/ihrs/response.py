"""Block planning, rule rendering and actuation for offending addresses."""

from __future__ import annotations

import logging
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Protocol

from .util import atomic_write, ip_key, is_ipv4, utcnow

log = logging.getLogger(__name__)

FIREWALL_DROP = "firewall-drop"
ROUTE_REJECT = "route-reject"


@dataclass(frozen=True)
class FirewallRule:
    source: str
    chain: str = "INPUT"
    protocol: str = "icmp"
    icmp_type: str = "echo-request"
    length_range: tuple[int, int] = (1500, 65535)
    target: str = "DROP"

    def __post_init__(self):
        low, high = self.length_range
        if not 0 <= low <= high:
            raise ValueError(f"bad length range {self.length_range}")

    def render(self) -> str:
        low, high = self.length_range
        return (
            f"iptables -A {self.chain} -s {self.source} -p {self.protocol}"
            f" --icmp-type {self.icmp_type} -m length --length {low}:{high} -j {self.target}"
        )


def render_route_reject(address: str) -> str:
    return f"route add -host {address} reject"


@dataclass(frozen=True)
class ResponseAction:
    kind: str
    address: str
    rendered: str = ""

    def __post_init__(self):
        if self.kind not in (FIREWALL_DROP, ROUTE_REJECT):
            raise ValueError(f"unknown action kind {self.kind!r}")
        if not is_ipv4(self.address):
            raise ValueError(f"not an IPv4 address: {self.address!r}")
        expected = render_rule(self)
        if not self.rendered:
            object.__setattr__(self, "rendered", expected)
        elif self.rendered != expected:
            raise ValueError("rendered text does not match the action")


def render_rule(action: ResponseAction) -> str:
    if action.kind == FIREWALL_DROP:
        return FirewallRule(source=action.address).render()
    return render_route_reject(action.address)


class Blocklist:
    """Persistent set of blocked addresses. ``apply`` calls are serialized per instance."""

    def __init__(self, entries: Iterable[str] = (), updated_at: datetime | None = None):
        self.entries: set[str] = set()
        for e in entries:
            if not is_ipv4(e):
                raise ValueError(f"not an IPv4 address: {e!r}")
            self.entries.add(e)
        self.updated_at = updated_at or utcnow()
        self.lock = threading.Lock()

    def __contains__(self, addr: str) -> bool:
        return addr in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other):
        if isinstance(other, Blocklist):
            return self.entries == other.entries
        return NotImplemented

    def __repr__(self):
        return f"Blocklist({self.sorted()!r})"

    def sorted(self) -> list[str]:
        return sorted(self.entries, key=ip_key)

    def copy(self) -> "Blocklist":
        return Blocklist(self.entries, self.updated_at)

    def dumps(self) -> str:
        return "".join(f"{a}\n" for a in self.sorted())

    def save(self, path: str | Path) -> None:
        atomic_write(path, self.dumps().encode())

    @classmethod
    def load(cls, path: str | Path) -> "Blocklist":
        path = Path(path)
        if not path.exists():
            return cls()
        entries = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
        mtime = datetime.fromtimestamp(path.stat().st_mtime).astimezone()
        return cls(entries, mtime)


def plan_block(offenders: Iterable[str], current: Blocklist) -> list[ResponseAction]:
    plan = []
    for addr in sorted(set(offenders), key=ip_key):
        if addr in current:
            continue
        plan.append(ResponseAction(FIREWALL_DROP, addr))
        plan.append(ResponseAction(ROUTE_REJECT, addr))
    return plan


class ActuatorUnavailable(RuntimeError):
    pass


class Actuator(Protocol):
    def execute(self, command: str) -> bool: ...


class DryRunActuator:
    """Records commands instead of running them."""

    def __init__(self):
        self.commands: list[str] = []

    def execute(self, command: str) -> bool:
        self.commands.append(command)
        return True


class ShellActuator:
    """Runs each rendered command. Needs the privileges the commands need."""

    def __init__(self, timeout: float = 30.0):
        self.timeout = timeout

    def execute(self, command: str) -> bool:
        argv = shlex.split(command)
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=self.timeout)
        except FileNotFoundError as exc:
            raise ActuatorUnavailable(str(exc)) from exc
        except subprocess.TimeoutExpired:
            log.error("timed out: %s", command)
            return False
        if proc.returncode != 0:
            log.error("%s failed (%d): %s", command, proc.returncode, proc.stderr.decode(errors="replace").strip())
        return proc.returncode == 0


@dataclass
class BlockReport:
    outcomes: list[tuple[ResponseAction, bool]] = field(default_factory=list)
    blocked: list[str] = field(default_factory=list)

    @property
    def failed(self) -> list[ResponseAction]:
        return [a for a, ok in self.outcomes if not ok]


def apply(plan: list[ResponseAction], actuator: Actuator, current: Blocklist) -> BlockReport:
    """Execute ``plan`` in order and add fully blocked addresses to ``current``.

    An address joins the blocklist only when every one of its actions
    succeeded. If the actuator turns out to be unavailable, every action is
    reported failed and the blocklist is left as it was.
    """
    report = BlockReport()
    if not plan:
        return report
    with current.lock:
        ok_by_addr: dict[str, bool] = {}
        try:
            for action in plan:
                ok = bool(actuator.execute(action.rendered))
                report.outcomes.append((action, ok))
                ok_by_addr[action.address] = ok_by_addr.get(action.address, True) and ok
        except ActuatorUnavailable as exc:
            log.error("actuator unavailable: %s", exc)
            report.outcomes = [(a, False) for a in plan]
            return report
        for addr, ok in ok_by_addr.items():
            if ok and addr not in current.entries:
                current.entries.add(addr)
                report.blocked.append(addr)
        if report.blocked:
            current.updated_at = utcnow()
    return report

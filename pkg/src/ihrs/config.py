"""``key = value`` configuration with documented defaults.

Relative paths are resolved against the config file's directory, and
every path left at its default moves with ``data_dir``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

log = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = "/etc/ihrs/ihrs.conf"
DATA_DIR = "/var/lib/ihrs"


class ConfigError(ValueError):
    pass


def _split(value: str) -> list[str]:
    return [v for v in (p.strip() for p in value.replace(",", " ").split()) if v]


@dataclass
class Config:
    data_dir: str = DATA_DIR
    alerts_log: str = "/var/log/snort/alerts.ids"
    blocklist: str = f"{DATA_DIR}/blocklist"
    allowlist: list[str] = field(default_factory=lambda: ["127.0.0.1"])
    execute_blocks: bool = False
    baseline_dir: str = f"{DATA_DIR}/tripwire"
    integrity_roots: list[str] = field(default_factory=lambda: ["/etc", "/bin", "/sbin", "/usr/bin", "/usr/sbin"])
    passphrase_file: str | None = None
    reports_dir: str = f"{DATA_DIR}/reports"
    severity_list: str = f"{DATA_DIR}/severity_levels.txt"
    scan_roots: list[str] = field(default_factory=lambda: ["/usr", "/bin", "/etc", "/boot"])
    quarantine_dir: str = f"{DATA_DIR}/quarantine"
    signature_db: str = f"{DATA_DIR}/clamav/signatures.db"
    update_config: str | None = None
    infected_list: str = f"{DATA_DIR}/antivirus_infected_list"
    manifest: str = f"{DATA_DIR}/rootkit.manifest"
    binaries_root: str = "/"
    login_records: str | None = None
    interfaces: str | None = None
    mail_spool: str = f"{DATA_DIR}/mail/root"
    backup_src: str | None = None
    backup_dest: str | None = None
    backup_mirror: bool = False
    known_hosts: str = f"{DATA_DIR}/known_hosts"
    incident_store: str = f"{DATA_DIR}/incidents.log"
    crontab: str | None = None
    schedule_state: str = f"{DATA_DIR}/schedule.state"
    correlation_window: int = 3600
    timezone: str = "UTC"


_LISTS = {"allowlist", "integrity_roots", "scan_roots"}
_BOOLS = {"execute_blocks", "backup_mirror"}
_INTS = {"correlation_window"}
_NOT_PATHS = {"allowlist", "timezone", "execute_blocks", "backup_mirror", "correlation_window"}
_KEYS = {f.name for f in fields(Config)}


def _bool(value: str) -> bool:
    v = value.lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def parse_config(text: str, base_dir: str | Path | None = None) -> Config:
    raw: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {n}: expected 'key = value'")
        if key not in _KEYS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in raw:
            log.warning("config line %d: duplicate key %r, last value wins", n, key)
        raw[key] = value
    cfg = Config()
    base = Path(base_dir) if base_dir is not None else None
    for key, value in raw.items():
        try:
            if key in _LISTS:
                parsed = _split(value)
                if base is not None and key not in _NOT_PATHS:
                    parsed = [str(base / p) for p in parsed]
            elif key in _BOOLS:
                parsed = _bool(value)
            elif key in _INTS:
                parsed = int(value)
            else:
                parsed = value
                if base is not None and key not in _NOT_PATHS:
                    parsed = str(base / value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
        setattr(cfg, key, parsed)
    # Paths left at their defaults follow data_dir.
    if "data_dir" in raw:
        for f in fields(Config):
            v = getattr(cfg, f.name)
            if f.name not in raw and isinstance(v, str) and v.startswith(DATA_DIR + "/"):
                setattr(cfg, f.name, cfg.data_dir + v[len(DATA_DIR):])
    return cfg


def load_config(path: str | Path | None) -> Config:
    """Missing file means all defaults."""
    if path is None:
        path = DEFAULT_CONFIG_PATH
    path = Path(path)
    if not path.exists():
        return Config()
    return parse_config(path.read_text(), base_dir=path.resolve().parent)


def dump_config(cfg: Config) -> str:
    lines = []
    for f in fields(Config):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if isinstance(v, list):
            v = ", ".join(v)
        elif isinstance(v, bool):
            v = "yes" if v else "no"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"

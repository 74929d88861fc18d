"""Host incident handling and response: detection, blocking, integrity,
malware scanning, forensics, rootkit audit, scheduling and backups."""

__version__ = "0.1.0"

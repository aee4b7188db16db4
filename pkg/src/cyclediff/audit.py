"""Instrumented file I/O for the two-party privacy assertions.

Wraps the interpreter's `open` for the duration of a with-block and
records which paths were opened for reading and writing.  The recorded
read set is what lets a test (or a reviewer) check that the encoding
party never touched the decoding party's raw data and vice versa.
"""

from __future__ import annotations

import builtins
import io
import json
from pathlib import Path


class FileAccessAudit:
    """Context manager recording absolute paths of every open() call."""

    def __init__(self):
        self.reads: set[str] = set()
        self.writes: set[str] = set()
        self._original = None

    def __enter__(self):
        self._original = builtins.open
        original = self._original
        audit = self

        def audited_open(file, mode="r", *args, **kwargs):
            try:
                resolved = str(Path(file).resolve())
            except TypeError:
                resolved = None  # file descriptors etc.
            if resolved is not None:
                if any(flag in mode for flag in ("w", "a", "x", "+")):
                    audit.writes.add(resolved)
                if "r" in mode or "+" in mode:
                    audit.reads.add(resolved)
            return original(file, mode, *args, **kwargs)

        builtins.open = audited_open
        io.open = audited_open
        return self

    def __exit__(self, *exc):
        builtins.open = self._original
        io.open = self._original
        return False

    def write_log(self, path: str | Path) -> None:
        log = {"reads": sorted(self.reads), "writes": sorted(self.writes)}
        with open(path, "w") as fh:
            json.dump(log, fh, indent=1, sort_keys=True)


def load_audit_log(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)

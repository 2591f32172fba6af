"""Minimal INI dialect shared by the config and scenario files.

Differences from :mod:`configparser` that matter here:

* a trailing backslash joins the next physical line (backslash and line
  break removed), exactly like the HTCondor-style config files admins write;
* sections may repeat (``[arrival]`` blocks in scenario files);
* every section and key keeps its source line number for diagnostics;
* section and key names are case-sensitive.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class IniSyntaxError(ValueError):
    def __init__(self, message: str, line: int):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


@dataclass
class Entry:
    key: str
    value: str
    line: int


@dataclass
class Section:
    name: str
    line: int
    entries: list[Entry] = field(default_factory=list)

    def get(self, key: str) -> Entry | None:
        for e in self.entries:
            if e.key == key:
                return e
        return None


def _logical_lines(text: str):
    """Yield (first physical line number, joined text)."""
    pending = None
    start = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if pending is None:
            start = lineno
            pending = ""
        stripped = raw.rstrip()
        if stripped.endswith("\\"):
            pending += stripped[:-1]
            continue
        yield start, pending + raw
        pending = None
    if pending is not None:
        yield start, pending


def read_ini(text: str) -> list[Section]:
    """Parse into sections in file order.  Entries before any header land in
    a section named ``""``."""
    sections: list[Section] = []
    current = None
    for lineno, line in _logical_lines(text):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("["):
            if not s.endswith("]") or len(s) < 3:
                raise IniSyntaxError(f"malformed section header {s!r}", lineno)
            current = Section(s[1:-1].strip(), lineno)
            sections.append(current)
            continue
        if "=" not in s:
            raise IniSyntaxError(f"expected key=value, got {s!r}", lineno)
        key, value = s.split("=", 1)
        key = key.strip()
        if not key:
            raise IniSyntaxError("empty key", lineno)
        if current is None:
            current = Section("", lineno)
            sections.append(current)
        if current.get(key) is not None:
            raise IniSyntaxError(f"duplicate key {key!r} in [{current.name}]", lineno)
        current.entries.append(Entry(key, value.strip(), lineno))
    return sections

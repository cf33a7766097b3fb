"""Flat key/value + table configuration documents.

Format::

    # comment
    name = paper-nfad
    dead_time_ns = 25

    dark_rate_table:
        temperature_C, bias, rate_Hz
        -60, b1, 200
        -70, b1, 100

A line ``key = value`` sets a scalar. A line ``key:`` opens a table whose
indented lines that follow are CSV rows, the first one being the header.
A table ends at the first non-indented, non-blank line. Trailing ``#``
comments are stripped from scalar lines.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class Table:
    columns: list[str]
    rows: list[list[str]]

    def column(self, name, conv=str):
        try:
            i = self.columns.index(name)
        except ValueError:
            raise ConfigError(f"table has no column {name!r} (has {self.columns})") from None
        return [conv(r[i]) for r in self.rows]

    def records(self):
        return [dict(zip(self.columns, r)) for r in self.rows]


@dataclass
class ConfigDoc:
    values: dict[str, str] = field(default_factory=dict)
    tables: dict[str, Table] = field(default_factory=dict)
    source: str = "<string>"

    def get(self, key, default=None, conv=str):
        if key not in self.values:
            return default
        raw = self.values[key]
        try:
            return conv(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{self.source}: bad value for {key}: {raw!r}") from None

    def require(self, key, conv=str):
        if key not in self.values:
            raise ConfigError(f"{self.source}: missing required key {key!r}")
        return self.get(key, conv=conv)

    def dump(self) -> str:
        out = [f"{k} = {v}" for k, v in self.values.items()]
        for name, t in self.tables.items():
            out.append("")
            out.append(f"{name}:")
            out.append("    " + ", ".join(t.columns))
            out.extend("    " + ", ".join(r) for r in t.rows)
        return "\n".join(out) + "\n"


def parse_config(text: str, source="<string>") -> ConfigDoc:
    doc = ConfigDoc(source=source)
    table_name, table_lines = None, []

    def close_table():
        if table_name is None:
            return
        rows = [[c.strip() for c in r] for r in csv.reader(table_lines) if r]
        if not rows:
            raise ConfigError(f"{source}: table {table_name!r} has no header")
        header, body = rows[0], rows[1:]
        for r in body:
            if len(r) != len(header):
                raise ConfigError(f"{source}: table {table_name!r} row {r} has {len(r)} cells, expected {len(header)}")
        doc.tables[table_name] = Table(header, body)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if table_name is not None and raw[:1] in (" ", "\t"):
            table_lines.append(stripped.split("#", 1)[0])
            continue
        close_table()
        table_name, table_lines = None, []
        line = stripped.split("#", 1)[0].strip()
        if line.endswith(":") and "=" not in line:
            table_name = line[:-1].strip()
            if table_name in doc.tables:
                raise ConfigError(f"{source}:{lineno}: duplicate table {table_name!r}")
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        if key.strip() in doc.values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key.strip()!r}")
        doc.values[key.strip()] = value.strip()
    close_table()
    return doc


def load_config(path) -> ConfigDoc:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text, source=str(path))


DATA_DIR = Path(__file__).parent / "data"


def shipped_config(name: str) -> Path:
    """Path of a config bundled with the package, e.g. ``paper-nfad``."""
    p = DATA_DIR / f"{name}.conf"
    if not p.exists():
        raise ConfigError(f"no shipped config named {name!r}")
    return p


def resolve_config(ref: str, relative_to: Path | None = None) -> Path:
    """Resolve a config reference: a path (absolute or relative) or a shipped name."""
    candidates = [Path(ref)]
    if relative_to is not None:
        candidates.insert(0, relative_to / ref)
    for c in candidates:
        if c.is_file():
            return c
    return shipped_config(ref)

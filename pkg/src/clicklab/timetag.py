"""Time-tag data model and on-disk formats.

Timestamps are integer picoseconds held in ``int64`` numpy arrays. A
:class:`ChannelStream` is one detector channel over an explicit observation
window; a :class:`TagRun` groups streams that share that window.

Two file formats are supported:

* CSV: header ``#clicklab-csv v1 duration_ps=<int>``, optional
  ``#meta key=value`` lines, then rows ``channel,timestamp_ps`` sorted by
  timestamp.
* Binary: magic ``CLK1``, little-endian u64 duration, then packed records of
  u8 channel + little-endian u64 timestamp, sorted by timestamp.
"""

from __future__ import annotations

import io
import os
import re
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

MAX_CHANNEL = 255
CSV_MAGIC = "#clicklab-csv"
BIN_MAGIC = b"CLK"
BIN_VERSION = b"1"

_RECORD = np.dtype([("channel", "u1"), ("t", "<u8")])
_CSV_HEADER = re.compile(r"^#clicklab-csv v(\d+) duration_ps=(\d+)\s*$")


class TagFormatError(ValueError):
    """Raised when a tag file cannot be parsed."""


class Violation(NamedTuple):
    index: int
    reason: str


@dataclass(frozen=True, eq=False)
class ChannelStream:
    channel: int
    tags: np.ndarray
    duration: int

    def __post_init__(self):
        tags = np.asarray(self.tags)
        if tags.dtype != np.int64:
            tags = tags.astype(np.int64)
        tags.flags.writeable = False
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "duration", int(self.duration))
        object.__setattr__(self, "channel", int(self.channel))

    def __len__(self):
        return len(self.tags)

    def __eq__(self, other):
        if not isinstance(other, ChannelStream):
            return NotImplemented
        return (self.channel == other.channel and self.duration == other.duration
                and np.array_equal(self.tags, other.tags))

    @property
    def rate(self) -> float:
        """Mean click rate in Hz over the full window."""
        return len(self.tags) / (self.duration * 1e-12) if self.duration else 0.0

    def with_tags(self, tags) -> "ChannelStream":
        return ChannelStream(self.channel, tags, self.duration)


@dataclass
class TagRun:
    streams: dict[int, ChannelStream]
    duration: int
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for ch, s in self.streams.items():
            if s.channel != ch:
                raise ValueError(f"stream keyed as {ch} has channel {s.channel}")
            if s.duration != self.duration:
                raise ValueError(f"channel {ch} duration {s.duration} != run duration {self.duration}")

    @classmethod
    def from_streams(cls, *streams: ChannelStream, metadata=None) -> "TagRun":
        if not streams:
            raise ValueError("need at least one stream")
        return cls({s.channel: s for s in streams}, streams[0].duration, dict(metadata or {}))

    def __eq__(self, other):
        if not isinstance(other, TagRun):
            return NotImplemented
        return (self.duration == other.duration and self.metadata == other.metadata
                and self.streams.keys() == other.streams.keys()
                and all(self.streams[k] == other.streams[k] for k in self.streams))


def validate(stream: ChannelStream) -> Violation | None:
    """Return the first invariant violation of ``stream``, or None if it is valid."""
    if not 0 <= stream.channel <= MAX_CHANNEL:
        return Violation(-1, "channel out of range")
    if stream.duration < 0:
        return Violation(-1, "negative duration")
    t = stream.tags
    if len(t) == 0:
        return None
    if t[0] < 0:
        return Violation(0, "negative timestamp")
    bad_order = np.flatnonzero(np.diff(t) < 0)
    bad_range = np.flatnonzero((t > stream.duration) | (t < 0))
    first_order = bad_order[0] + 1 if len(bad_order) else len(t)
    first_range = bad_range[0] if len(bad_range) else len(t)
    if first_order == first_range == len(t):
        return None
    if first_order <= first_range:
        return Violation(int(first_order), "out of order")
    return Violation(int(first_range), "exceeds duration" if t[first_range] > stream.duration else "negative timestamp")


def merge(a: ChannelStream, b: ChannelStream) -> ChannelStream:
    """Sorted union of two streams of the same channel, keeping duplicates."""
    if a.channel != b.channel:
        raise ValueError(f"channel mismatch: {a.channel} vs {b.channel}")
    if a.duration != b.duration:
        raise ValueError(f"duration mismatch: {a.duration} vs {b.duration}")
    return a.with_tags(merge_sorted(a.tags, b.tags))


def merge_sorted(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Merge two sorted int64 arrays; ties from ``x`` precede ties from ``y``."""
    if len(x) == 0:
        return np.array(y, dtype=np.int64)
    if len(y) == 0:
        return np.array(x, dtype=np.int64)
    out = np.empty(len(x) + len(y), dtype=np.int64)
    pos = np.searchsorted(x, y, side="right") + np.arange(len(y))
    mask = np.ones(len(out), dtype=bool)
    mask[pos] = False
    out[pos] = y
    out[mask] = x
    return out


# ---------------------------------------------------------------------------
# file formats


def _interleave(run: TagRun) -> tuple[np.ndarray, np.ndarray]:
    chans = sorted(run.streams)
    if not chans:
        return np.empty(0, np.uint8), np.empty(0, np.int64)
    t = np.concatenate([run.streams[c].tags for c in chans])
    ch = np.concatenate([np.full(len(run.streams[c]), c, dtype=np.uint8) for c in chans])
    order = np.argsort(t, kind="stable")
    return ch[order], t[order]


def _split(channels: np.ndarray, t: np.ndarray, duration: int, declared=()) -> dict[int, ChannelStream]:
    streams = {}
    present = np.unique(channels) if len(channels) else np.empty(0, np.uint8)
    for c in sorted(set(int(c) for c in present) | set(declared)):
        streams[c] = ChannelStream(c, t[channels == c], duration)
    return streams


def write_tags(run: TagRun, path, fmt: str | None = None) -> None:
    """Write ``run`` to ``path``; format from ``fmt`` or the file suffix (.csv / anything else binary)."""
    fmt = fmt or _guess_format(path)
    for s in run.streams.values():
        v = validate(s)
        if v is not None:
            raise ValueError(f"channel {s.channel}: {v.reason} at index {v.index}")
    ch, t = _interleave(run)
    if fmt == "csv":
        with open(path, "w", newline="\n") as f:
            f.write(_format_csv(run, ch, t))
    elif fmt == "bin":
        rec = np.empty(len(t), dtype=_RECORD)
        rec["channel"] = ch
        rec["t"] = t
        with open(path, "wb") as f:
            f.write(BIN_MAGIC + BIN_VERSION)
            f.write(struct.pack("<Q", run.duration))
            f.write(rec.tobytes())
    else:
        raise ValueError(f"unknown tag format {fmt!r}")


def _format_csv(run: TagRun, ch, t) -> str:
    buf = io.StringIO()
    buf.write(f"{CSV_MAGIC} v1 duration_ps={run.duration}\n")
    buf.write("#channels " + ",".join(str(c) for c in sorted(run.streams)) + "\n")
    for k, v in run.metadata.items():
        if "\n" in str(k) or "\n" in str(v) or "=" in str(k):
            raise ValueError(f"metadata entry {k!r} cannot be stored")
        buf.write(f"#meta {k}={v}\n")
    if len(t):
        rows = np.column_stack([ch.astype(np.int64), t])
        np.savetxt(buf, rows, fmt="%d", delimiter=",")
    return buf.getvalue()


def read_tags(path, fmt: str | None = None) -> TagRun:
    fmt = fmt or _guess_format(path)
    if fmt == "csv":
        with open(path, "r") as f:
            return _parse_csv(f.read())
    with open(path, "rb") as f:
        return _parse_bin(f.read())


def _guess_format(path) -> str:
    return "csv" if os.fspath(path).lower().endswith(".csv") else "bin"


def _parse_csv(text: str) -> TagRun:
    lines = text.split("\n")
    m = _CSV_HEADER.match(lines[0]) if lines else None
    if m is None:
        raise TagFormatError(f"malformed header: {lines[0][:60]!r}")
    if m.group(1) != "1":
        raise TagFormatError(f"unknown csv version v{m.group(1)}")
    duration = int(m.group(2))
    metadata, declared, body_start = {}, [], 1
    for i, line in enumerate(lines[1:], start=1):
        if not line.startswith("#"):
            body_start = i
            break
        if line.startswith("#meta "):
            key, sep, value = line[6:].partition("=")
            if not sep:
                raise TagFormatError(f"line {i + 1}: malformed metadata")
            metadata[key] = value
        elif line.startswith("#channels"):
            declared = [int(c) for c in line[9:].strip().split(",") if c.strip()]
        body_start = i + 1
    body = "\n".join(lines[body_start:]).strip()
    if body:
        try:
            rows = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.int64, ndmin=2)
        except ValueError as e:
            raise TagFormatError(f"bad row: {e}") from None
        if rows.shape[1] != 2:
            raise TagFormatError("rows must be channel,timestamp_ps")
        ch, t = rows[:, 0], rows[:, 1]
    else:
        ch, t = np.empty(0, np.int64), np.empty(0, np.int64)
    _check_rows(ch, t, duration)
    return TagRun(_split(ch.astype(np.uint8), t, duration, declared), duration, metadata)


def _parse_bin(data: bytes) -> TagRun:
    if len(data) < 12 or data[:3] != BIN_MAGIC:
        raise TagFormatError("malformed header: missing CLK magic")
    if data[3:4] != BIN_VERSION:
        raise TagFormatError(f"unknown version byte {data[3:4]!r}")
    (duration,) = struct.unpack("<Q", data[4:12])
    body = data[12:]
    if len(body) % _RECORD.itemsize:
        raise TagFormatError("truncated record")
    rec = np.frombuffer(body, dtype=_RECORD)
    if len(rec) and rec["t"].max() > np.iinfo(np.int64).max:
        raise TagFormatError("timestamp does not fit in int64")
    t = rec["t"].astype(np.int64)
    ch = rec["channel"].copy()
    _check_rows(ch, t, duration)
    return TagRun(_split(ch, t, duration), duration, {})


def _check_rows(ch, t, duration):
    if len(t) == 0:
        return
    if np.any((ch < 0) | (ch > MAX_CHANNEL)):
        raise TagFormatError("channel out of range")
    bad = np.flatnonzero(np.diff(t) < 0)
    if len(bad):
        raise TagFormatError(f"non-monotone rows at row {bad[0] + 1}")
    if t[0] < 0 or t[-1] > duration:
        raise TagFormatError("timestamp outside [0, duration]")

"""Time-tag stream container and its binary/CSV file formats.

Binary layout (little-endian)::

    b"QTG1" | u32 version=1 | u64 count | count * (u16 channel, u16 0, u64 time_ps)

Text layout is CSV with a ``channel,time_ps`` header.
"""
from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

MAGIC = b"QTG1"
VERSION = 1
MAX_CHANNEL = 15
CSV_HEADER = "channel,time_ps"

_HEADER = struct.Struct("<4sIQ")
RECORD_DTYPE = np.dtype([("channel", "<u2"), ("reserved", "<u2"), ("time_ps", "<u8")])


class TagFormatError(ValueError):
    """Malformed or invalid tag data."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"record {index}: {message}")
        self.index = index


@dataclass(frozen=True, eq=False)
class TagStream:
    """Detector clicks sorted by time. ``time_ps`` is int64, ``channel`` uint16."""

    channel: np.ndarray
    time_ps: np.ndarray

    def __post_init__(self):
        ch = np.ascontiguousarray(self.channel, dtype=np.uint16)
        t = np.ascontiguousarray(self.time_ps, dtype=np.int64)
        if ch.shape != t.shape or ch.ndim != 1:
            raise ValueError("channel and time arrays must be 1-D and of equal length")
        object.__setattr__(self, "channel", ch)
        object.__setattr__(self, "time_ps", t)

    def __len__(self) -> int:
        return int(self.time_ps.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TagStream):
            return NotImplemented
        return np.array_equal(self.channel, other.channel) and np.array_equal(self.time_ps, other.time_ps)

    @classmethod
    def empty(cls) -> "TagStream":
        return cls(np.zeros(0, np.uint16), np.zeros(0, np.int64))

    @classmethod
    def from_records(cls, records: Iterable[tuple[int, int]]) -> "TagStream":
        recs = list(records)
        if not recs:
            return cls.empty()
        ch, t = zip(*recs)
        return cls(np.array(ch), np.array(t))

    @classmethod
    def merge(cls, streams: Iterable["TagStream"]) -> "TagStream":
        """Merge streams into one, ordered by (time, channel)."""
        streams = list(streams)
        if not streams:
            return cls.empty()
        ch = np.concatenate([s.channel for s in streams])
        t = np.concatenate([s.time_ps for s in streams])
        order = np.lexsort((ch, t))
        return cls(ch[order], t[order])

    def times(self, channel: int) -> np.ndarray:
        return self.time_ps[self.channel == channel]

    def shifted(self, offset_ps: int) -> "TagStream":
        return TagStream(self.channel, self.time_ps + offset_ps)

    def validate(self) -> None:
        if len(self) == 0:
            return
        bad = np.flatnonzero(self.channel > MAX_CHANNEL)
        if bad.size:
            raise TagFormatError(f"channel {int(self.channel[bad[0]])} out of range 0-{MAX_CHANNEL}", int(bad[0]))
        neg = np.flatnonzero(self.time_ps < 0)
        if neg.size:
            raise TagFormatError("negative timestamp", int(neg[0]))
        dec = np.flatnonzero(np.diff(self.time_ps) < 0)
        if dec.size:
            raise TagFormatError("timestamps decrease", int(dec[0]) + 1)


def write_tags(stream: TagStream, fmt: str = "binary") -> bytes:
    stream.validate()
    if fmt == "binary":
        rec = np.zeros(len(stream), dtype=RECORD_DTYPE)
        rec["channel"] = stream.channel
        rec["time_ps"] = stream.time_ps
        return _HEADER.pack(MAGIC, VERSION, len(stream)) + rec.tobytes()
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        if len(stream):
            np.savetxt(buf, np.column_stack([stream.channel, stream.time_ps]), fmt="%d", delimiter=",")
        return buf.getvalue().encode("ascii")
    raise ValueError(f"unknown tag format {fmt!r}")


def _parse_binary(data: bytes) -> TagStream:
    if len(data) < _HEADER.size:
        raise TagFormatError("truncated header")
    magic, version, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TagFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TagFormatError(f"unsupported version {version}")
    body = len(data) - _HEADER.size
    have = body // RECORD_DTYPE.itemsize
    if have < count or body % RECORD_DTYPE.itemsize:
        raise TagFormatError(f"truncated record (header announces {count}, found {body / RECORD_DTYPE.itemsize:g})", min(have, count))
    if have > count:
        raise TagFormatError(f"trailing data after {count} records", count)
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=_HEADER.size)
    if count and rec["time_ps"].max() > np.iinfo(np.int64).max:
        raise TagFormatError("timestamp exceeds int64 range", int(np.argmax(rec["time_ps"])))
    bad = np.flatnonzero(rec["channel"] > MAX_CHANNEL)
    if bad.size:
        raise TagFormatError(f"channel {int(rec['channel'][bad[0]])} out of range 0-{MAX_CHANNEL}", int(bad[0]))
    stream = TagStream(rec["channel"], rec["time_ps"].astype(np.int64))
    stream.validate()
    return stream


def _parse_csv(text: str) -> TagStream:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise TagFormatError(f"bad magic: expected {MAGIC!r} or a '{CSV_HEADER}' header")
    rows = [ln for ln in lines[1:] if ln.strip()]
    ch = np.empty(len(rows), dtype=np.int64)
    t = np.empty(len(rows), dtype=np.int64)
    for i, ln in enumerate(rows):
        parts = ln.split(",")
        if len(parts) != 2:
            raise TagFormatError("truncated record", i)
        try:
            ch[i], t[i] = int(parts[0]), int(parts[1])
        except ValueError:
            raise TagFormatError(f"unparsable record {ln!r}", i) from None
    bad = np.flatnonzero((ch < 0) | (ch > MAX_CHANNEL))
    if bad.size:
        raise TagFormatError(f"channel {int(ch[bad[0]])} out of range 0-{MAX_CHANNEL}", int(bad[0]))
    stream = TagStream(ch, t)
    stream.validate()
    return stream


def parse_tags(data: bytes | str) -> TagStream:
    """Parse a binary or CSV tag stream, validating order and channel range."""
    if isinstance(data, str):
        return _parse_csv(data)
    if data[:4] == MAGIC or not data[:len(CSV_HEADER)].decode("ascii", "replace").startswith("channel"):
        return _parse_binary(data)
    return _parse_csv(data.decode("ascii"))


def read_tag_file(path: str | os.PathLike) -> TagStream:
    with open(path, "rb") as f:
        return parse_tags(f.read())


def write_tag_file(path: str | os.PathLike, stream: TagStream, fmt: str | None = None) -> None:
    if fmt is None:
        fmt = "csv" if str(path).endswith(".csv") else "binary"
    with open(path, "wb") as f:
        f.write(write_tags(stream, fmt))

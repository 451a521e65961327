"""Timetag data model and the ``.qtag`` / ``.csv`` file formats.

Binary layout (little-endian)::

    header   "QTAG"  u16 version  10 reserved bytes     (16 bytes)
    record   u8 channel  i64 timestamp_ps                (9 bytes each)

CSV layout: a ``channel,timestamp_ps`` header line, then integer rows.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"QTAG"
VERSION = 1
HEADER = struct.Struct("<4sH10s")
RECORD_DTYPE = np.dtype([("channel", "u1"), ("timestamp", "<i8")])
CSV_HEADER = "channel,timestamp_ps"


class TagFormatError(ValueError):
    pass


class TagStream:
    """Immutable-by-convention list of (channel, timestamp_ps) tags.

    ``roles`` maps role labels (``clock``, ``arm_a``, ``arm_b``) to channel ids.
    ``reordered`` is set by :func:`sort_and_validate`.
    """

    def __init__(self, channels, timestamps, *, is_sorted=False, roles=None, reordered=0):
        self.channels = np.asarray(channels, dtype=np.uint8)
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        if self.channels.shape != self.timestamps.shape or self.channels.ndim != 1:
            raise ValueError("channels and timestamps must be 1-d arrays of equal length")
        self.is_sorted = bool(is_sorted)
        self.roles = dict(roles or {})
        self.reordered = int(reordered)

    def __len__(self):
        return self.timestamps.size

    def __eq__(self, other):
        if not isinstance(other, TagStream):
            return NotImplemented
        return np.array_equal(self.channels, other.channels) and np.array_equal(
            self.timestamps, other.timestamps
        )

    def __repr__(self):
        return f"TagStream(n={len(self)}, sorted={self.is_sorted}, roles={self.roles})"

    def channel(self, ch) -> np.ndarray:
        """Timestamps of one channel; ``ch`` may be an id or a role label."""
        if isinstance(ch, str):
            ch = self.roles[ch]
        return self.timestamps[self.channels == ch]

    def sorted(self) -> "TagStream":
        return sort_and_validate(self)


def write_binary(stream: TagStream, path=None) -> bytes:
    rec = np.empty(len(stream), dtype=RECORD_DTYPE)
    rec["channel"] = stream.channels
    rec["timestamp"] = stream.timestamps
    data = HEADER.pack(MAGIC, VERSION, bytes(10)) + rec.tobytes()
    if path is not None:
        Path(path).write_bytes(data)
    return data


def parse_binary(data: bytes) -> TagStream:
    if len(data) < HEADER.size:
        raise TagFormatError(f"truncated header: {len(data)} bytes")
    magic, version, _ = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TagFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TagFormatError(f"unsupported version {version}")
    body = len(data) - HEADER.size
    whole, extra = divmod(body, RECORD_DTYPE.itemsize)
    if extra:
        offset = HEADER.size + whole * RECORD_DTYPE.itemsize
        raise TagFormatError(f"truncated record at byte offset {offset}")
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, offset=HEADER.size, count=whole)
    return TagStream(rec["channel"].copy(), rec["timestamp"].copy())


def write_csv(stream: TagStream, path=None) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for c, t in zip(stream.channels.tolist(), stream.timestamps.tolist()):
        buf.write(f"{c},{t}\n")
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def parse_csv(text: str) -> TagStream:
    lines = text.splitlines()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise TagFormatError(f"missing header line {CSV_HEADER!r}")
    chans, times = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TagFormatError(f"line {lineno}: expected 2 fields, got {len(parts)}")
        try:
            c, t = int(parts[0]), int(parts[1])
        except ValueError:
            raise TagFormatError(f"line {lineno}: non-integer field in {line!r}") from None
        if not 0 <= c < 256:
            raise TagFormatError(f"line {lineno}: channel {c} out of range")
        chans.append(c)
        times.append(t)
    return TagStream(np.array(chans, dtype=np.uint8), np.array(times, dtype=np.int64))


def read_tags(path, fmt=None) -> TagStream:
    """Load a tag file, choosing the parser by ``fmt`` or the file extension."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt == "qtag":
        return parse_binary(path.read_bytes())
    if fmt == "csv":
        return parse_csv(path.read_text(encoding="utf-8"))
    raise TagFormatError(f"unknown tag format {fmt!r} (use qtag or csv)")


def write_tags(stream: TagStream, path, fmt=None):
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt == "qtag":
        write_binary(stream, path)
    elif fmt == "csv":
        write_csv(stream, path)
    else:
        raise TagFormatError(f"unknown tag format {fmt!r} (use qtag or csv)")


def sort_and_validate(stream: TagStream) -> TagStream:
    """Stable sort by (timestamp, channel).

    ``reordered`` on the result counts tags whose index changed; a reversed
    3-tag stream therefore reports 2 (the middle tag stays put).
    """
    order = np.lexsort((stream.channels, stream.timestamps))
    moved = int(np.count_nonzero(order != np.arange(order.size)))
    return TagStream(
        stream.channels[order],
        stream.timestamps[order],
        is_sorted=True,
        roles=stream.roles,
        reordered=moved,
    )


def merge(streams) -> TagStream:
    """k-way merge of sorted streams; role maps are unioned."""
    roles = {}
    for s in streams:
        if not s.is_sorted:
            raise ValueError("merge requires sorted input streams")
        for label, ch in s.roles.items():
            if roles.setdefault(label, ch) != ch:
                raise ValueError(f"conflicting channel for role {label!r}: {roles[label]} vs {ch}")
    nonempty = [s for s in streams if len(s)]
    if not nonempty:
        return TagStream([], [], is_sorted=True, roles=roles)
    if len(nonempty) == 1:
        s = nonempty[0]
        return TagStream(s.channels, s.timestamps, is_sorted=True, roles=roles)
    # inputs are sorted, so a stable sort of the concatenation is the k-way merge
    c = np.concatenate([s.channels for s in nonempty])
    t = np.concatenate([s.timestamps for s in nonempty])
    order = np.lexsort((c, t))
    return TagStream(c[order], t[order], is_sorted=True, roles=roles)

"""Event data model, CSV I/O, and deterministic stereo merging.

Events carry integer microsecond timestamps throughout the pipeline; there is
no floating-point time anywhere. Streams are immutable after construction
(backing arrays are marked read-only) and sorted by the canonical key
(t, side, y, x, polarity) with LEFT ordered before RIGHT at equal t.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

OFF = 0
ON = 1
LEFT = 0
RIGHT = 1

SIDE_NAMES = {LEFT: "L", RIGHT: "R"}
SIDE_CODES = {"L": LEFT, "R": RIGHT}

EVENT_CSV_HEADER = "t_us,x,y,p,side"


class EventFormatError(ValueError):
    """Malformed event file; message carries the offending line number."""


@dataclass(frozen=True)
class CameraGeometry:
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"geometry must be positive, got {self.width}x{self.height}")

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height


#: Full-resolution geometry of the DAVIS cameras used for the recordings.
DAVIS_GEOMETRY = CameraGeometry(346, 260)


@dataclass(frozen=True)
class DvsEvent:
    t: int  # microseconds since recording start
    x: int
    y: int
    polarity: int  # ON=1 / OFF=0
    side: int  # LEFT=0 / RIGHT=1

    def sort_key(self) -> tuple[int, int, int, int, int]:
        return (self.t, self.side, self.y, self.x, self.polarity)


class StereoEventStream:
    """Time-ordered stereo event stream backed by read-only numpy columns.

    Construction sorts by the canonical key and validates every event against
    the geometry. Instances compare by exact field equality.
    """

    __slots__ = ("t", "x", "y", "p", "side", "geometry", "duration")

    def __init__(
        self,
        t: np.ndarray,
        x: np.ndarray,
        y: np.ndarray,
        p: np.ndarray,
        side: np.ndarray,
        geometry: CameraGeometry,
        _presorted: bool = False,
    ) -> None:
        t = np.asarray(t, dtype=np.int64)
        x = np.asarray(x, dtype=np.int32)
        y = np.asarray(y, dtype=np.int32)
        p = np.asarray(p, dtype=np.int8)
        side = np.asarray(side, dtype=np.int8)
        n = len(t)
        if not (len(x) == len(y) == len(p) == len(side) == n):
            raise ValueError("event columns have mismatched lengths")
        if n:
            if t.min() < 0:
                raise ValueError("negative timestamp")
            if x.min() < 0 or x.max() >= geometry.width or y.min() < 0 or y.max() >= geometry.height:
                raise ValueError(f"event coordinates outside geometry {geometry.width}x{geometry.height}")
            bad = ~np.isin(p, (OFF, ON)) | ~np.isin(side, (LEFT, RIGHT))
            if bad.any():
                raise ValueError("polarity must be 0/1 and side must be LEFT/RIGHT")
            if not _presorted:
                order = np.lexsort((p, x, y, side, t))
                t, x, y, p, side = t[order], x[order], y[order], p[order], side[order]
        for col in (t, x, y, p, side):
            col.setflags(write=False)
        self.t = t
        self.x = x
        self.y = y
        self.p = p
        self.side = side
        self.geometry = geometry
        self.duration = int(t[-1]) if n else 0

    @classmethod
    def from_events(cls, events: Sequence[DvsEvent], geometry: CameraGeometry) -> "StereoEventStream":
        if not events:
            return cls.empty(geometry)
        return cls(
            np.array([e.t for e in events]),
            np.array([e.x for e in events]),
            np.array([e.y for e in events]),
            np.array([e.polarity for e in events]),
            np.array([e.side for e in events]),
            geometry,
        )

    @classmethod
    def empty(cls, geometry: CameraGeometry) -> "StereoEventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, z, geometry, _presorted=True)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[DvsEvent]:
        for i in range(len(self.t)):
            yield self[i]

    def __getitem__(self, i: int) -> DvsEvent:
        return DvsEvent(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]), int(self.side[i]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StereoEventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and len(self) == len(other)
            and bool(np.array_equal(self.t, other.t))
            and bool(np.array_equal(self.x, other.x))
            and bool(np.array_equal(self.y, other.y))
            and bool(np.array_equal(self.p, other.p))
            and bool(np.array_equal(self.side, other.side))
        )

    def __repr__(self) -> str:
        return (
            f"StereoEventStream(n={len(self)}, duration={self.duration}us, "
            f"geometry={self.geometry.width}x{self.geometry.height})"
        )

    def select(self, keep: np.ndarray) -> "StereoEventStream":
        """New stream with the given boolean mask applied; order is preserved."""
        return StereoEventStream(
            self.t[keep], self.x[keep], self.y[keep], self.p[keep], self.side[keep],
            self.geometry, _presorted=True,
        )

    def replace_coords(self, x: np.ndarray, y: np.ndarray, geometry: CameraGeometry) -> "StereoEventStream":
        """New stream with remapped coordinates (used by downscale/crop).

        The canonical order of surviving events is unchanged by construction:
        remaps in this pipeline are monotone per (t, side) group.
        """
        return StereoEventStream(self.t, x, y, self.p, self.side, geometry, _presorted=False)

    def sides_present(self) -> set[int]:
        return set(int(s) for s in np.unique(self.side))


def parse_event_file(path: str, geometry: CameraGeometry, side: int | None = None) -> StereoEventStream:
    """Parse an event CSV (header ``t_us,x,y,p,side``) into a validated stream.

    Files for a single camera may omit the ``side`` column, in which case the
    side must be given explicitly. Input row order is normalized to the
    canonical sort key.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise EventFormatError(f"{path}:1: empty file, expected header '{EVENT_CSV_HEADER}'")
    header = lines[0].strip()
    if header == EVENT_CSV_HEADER:
        has_side = True
    elif header == "t_us,x,y,p":
        has_side = False
        if side is None:
            raise EventFormatError(f"{path}:1: file has no side column and no side was specified")
    else:
        raise EventFormatError(f"{path}:1: unrecognized header {header!r}")

    n = len(lines) - 1
    t = np.empty(n, dtype=np.int64)
    x = np.empty(n, dtype=np.int32)
    y = np.empty(n, dtype=np.int32)
    p = np.empty(n, dtype=np.int8)
    s = np.empty(n, dtype=np.int8)
    expected_fields = 5 if has_side else 4
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        fields = line.split(",")
        if len(fields) != expected_fields:
            raise EventFormatError(f"{path}:{lineno}: expected {expected_fields} fields, got {len(fields)}")
        try:
            t[i] = int(fields[0])
            x[i] = int(fields[1])
            y[i] = int(fields[2])
            p[i] = int(fields[3])
        except ValueError as exc:
            raise EventFormatError(f"{path}:{lineno}: {exc}") from None
        if p[i] not in (OFF, ON):
            raise EventFormatError(f"{path}:{lineno}: polarity must be 0 or 1, got {fields[3]!r}")
        if has_side:
            code = SIDE_CODES.get(fields[4].strip())
            if code is None:
                raise EventFormatError(f"{path}:{lineno}: side must be L or R, got {fields[4]!r}")
            s[i] = code
        else:
            s[i] = side
        if t[i] < 0:
            raise EventFormatError(f"{path}:{lineno}: negative timestamp {fields[0]}")
        if not geometry.contains(int(x[i]), int(y[i])):
            raise EventFormatError(
                f"{path}:{lineno}: coordinate ({fields[1]},{fields[2]}) outside "
                f"{geometry.width}x{geometry.height}"
            )
    return StereoEventStream(t, x, y, p, s, geometry)


def write_event_file(stream: StereoEventStream, path: str) -> None:
    """Write a stream as event CSV; ``parse_event_file`` round-trips exactly."""
    rows = [EVENT_CSV_HEADER]
    side_names = SIDE_NAMES
    t, x, y, p, s = stream.t, stream.x, stream.y, stream.p, stream.side
    for i in range(len(stream)):
        rows.append(f"{t[i]},{x[i]},{y[i]},{p[i]},{side_names[int(s[i])]}")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")
    os.replace(tmp, path)


def merge_streams(left: StereoEventStream, right: StereoEventStream) -> StereoEventStream:
    """Merge two single-sided streams into one canonical stereo stream."""
    if left.geometry != right.geometry:
        raise ValueError(f"geometry mismatch: {left.geometry} vs {right.geometry}")
    if len(left) and left.sides_present() != {LEFT}:
        raise ValueError("left stream contains non-LEFT events")
    if len(right) and right.sides_present() != {RIGHT}:
        raise ValueError("right stream contains non-RIGHT events")
    return StereoEventStream(
        np.concatenate([left.t, right.t]),
        np.concatenate([left.x, right.x]),
        np.concatenate([left.y, right.y]),
        np.concatenate([left.p, right.p]),
        np.concatenate([left.side, right.side]),
        left.geometry,
    )

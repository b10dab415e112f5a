"""Approximate-time matching of asynchronous sensor streams.

The lidar stream (the slowest) anchors the match: each lidar record is paired
with the nearest record of every other stream, and kept only if all of them
lie within the tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from ..errors import SyncError

DEFAULT_TOLERANCE_S = 0.005
ANCHOR = "lidar"


@dataclass(frozen=True)
class Record:
    timestamp: int  # ns
    data: Any = None


@dataclass(frozen=True)
class SyncedTick:
    time: int  # ns, the anchor timestamp
    records: Mapping[str, Record]

    @property
    def skew(self) -> float:
        """Largest pairwise timestamp difference in seconds."""
        ts = [r.timestamp for r in self.records.values()]
        return (max(ts) - min(ts)) * 1e-9

    def __getitem__(self, stream) -> Record:
        return self.records[stream]


@dataclass
class SyncResult:
    ticks: list
    dropped: dict = field(default_factory=dict)  # anchor records lost per stream


def synchronize(streams: Mapping[str, Sequence[Record]], tolerance: float = DEFAULT_TOLERANCE_S,
                anchor: str = ANCHOR) -> SyncResult:
    """Pair every anchor record with the nearest record of each other stream.

    An anchor record is dropped when any stream has nothing within
    ``tolerance`` seconds of it; drops are counted against the first stream
    that failed. Nearest-neighbour ties go to the earlier record.
    """
    if anchor not in streams or len(streams[anchor]) == 0:
        raise SyncError(f"the {anchor!r} stream is empty")
    tol_ns = tolerance * 1e9
    times = {}
    for name, recs in streams.items():
        ts = np.array([r.timestamp for r in recs], dtype=np.int64)
        if np.any(np.diff(ts) < 0):
            raise SyncError(f"stream {name!r} is not time-sorted")
        times[name] = ts
    others = [k for k in streams if k != anchor]
    dropped = {k: 0 for k in others}
    ticks = []
    for rec in streams[anchor]:
        t = rec.timestamp
        matched = {anchor: rec}
        for name in others:
            ts = times[name]
            if len(ts) == 0:
                dropped[name] += 1
                break
            k = int(np.searchsorted(ts, t))
            cands = [i for i in (k - 1, k) if 0 <= i < len(ts)]
            best = min(cands, key=lambda i: (abs(int(ts[i]) - t), i))
            if abs(int(ts[best]) - t) > tol_ns:
                dropped[name] += 1
                break
            matched[name] = streams[name][best]
        else:
            ticks.append(SyncedTick(t, matched))
    return SyncResult(ticks, dropped)

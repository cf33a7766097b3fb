"""Post-selection of click streams: blocking time and sync-referenced gates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .timetag import ChannelStream


@dataclass(frozen=True)
class GateConfig:
    """Acceptance window ``|t - s - offset_ps| <= width_ps / 2`` after the latest sync ``s``.

    With ``period_ps`` set, the window repeats every ``period_ps`` after the
    sync, which is how a divided laser clock gates every pump pulse.
    """

    offset_ps: int
    width_ps: int = 1300
    period_ps: float | None = None

    def __post_init__(self):
        if self.width_ps <= 0:
            raise ValueError("gate width must be positive")
        if self.offset_ps < 0:
            raise ValueError("gate offset must be non-negative")
        if self.period_ps is not None and self.period_ps <= 0:
            raise ValueError("gate period must be positive")


def blocking_filter(stream: ChannelStream, block_ps: int) -> ChannelStream:
    """Keep a tag only if no raw tag lies in ``(t - block_ps, t)``.

    The check runs against the unfiltered stream, so a rejected tag still
    blocks its successors.
    """
    if block_ps < 0:
        raise ValueError("block time must be non-negative")
    return stream.with_tags(_kernels.blocking_filter(stream.tags, np.int64(block_ps)))


def time_gate(stream: ChannelStream, sync: ChannelStream, gate: GateConfig) -> ChannelStream:
    if len(sync) == 0:
        raise ValueError("time gate needs a non-empty sync stream")
    period = float(gate.period_ps) if gate.period_ps else 0.0
    kept = _kernels.time_gate(stream.tags, sync.tags, np.int64(gate.offset_ps), np.int64(gate.width_ps), period)
    return stream.with_tags(kept)

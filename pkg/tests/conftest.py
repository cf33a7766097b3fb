import numpy as np
import pytest

from clicklab.timetag import ChannelStream


def stream(tags, duration=None, channel=1):
    tags = np.asarray(tags, dtype=np.int64)
    if duration is None:
        duration = int(tags.max()) + 1 if len(tags) else 1
    return ChannelStream(channel, tags, duration)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

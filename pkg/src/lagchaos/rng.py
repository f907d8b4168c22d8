"""Counter-based Gaussian streams keyed by (seed, stream id, counter)."""

import numpy as np


class NoiseStream:
    """Standard normal vectors, one per solver step, addressable by step index.

    Draws for step ``n`` come from a Philox generator keyed by
    ``(seed, stream_id)`` whose counter is positioned at the block containing
    ``n``. The vector returned for a given step therefore depends only on
    (seed, stream_id, n), never on how many other streams exist or in which
    order they are consumed. Checkpointing a stream means saving ``counter``.
    """

    block = 1024

    def __init__(self, seed, stream_id, width, counter=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self.width = int(width)
        self.counter = int(counter)
        self._block_index = None
        self._block = None

    def _load(self, b):
        bitgen = np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64),
                                  counter=np.array([0, 0, 0, b], dtype=np.uint64))
        self._block = np.random.Generator(bitgen).standard_normal((self.block, self.width))
        self._block_index = b

    def draw(self, n):
        """The normal vector for step ``n`` (does not move the counter)."""
        b, r = divmod(int(n), self.block)
        if b != self._block_index:
            self._load(b)
        return self._block[r]

    def next(self):
        xi = self.draw(self.counter)
        self.counter += 1
        return xi

    def copy(self):
        return NoiseStream(self.seed, self.stream_id, self.width, self.counter)

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, stream_id={self.stream_id}, width={self.width}, counter={self.counter})"


STREAM_NOISE, STREAM_INIT, STREAM_AUX = 0, 1, 2


def stream_id(index, kind):
    """Stream id of ``kind`` for ensemble member ``index``."""
    return 4 * int(index) + int(kind)


def generator(seed, stream):
    """A numpy Generator on the Philox stream keyed by (seed, stream)."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

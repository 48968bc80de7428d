"""Counter-based sample streams.

Every draw is a pure function of ``(seed, worker, step, draw_index)``: the
Philox key holds ``(seed, worker)`` and the counter is laid out so each step
owns a fixed block of output words. Engines can therefore evaluate workers in
any order, skip ahead, or cache chunks without changing a single sample.
"""
from __future__ import annotations

import numpy as np

_WORDS_PER_BLOCK = 4  # Philox4x64 emits four 64-bit words per counter tick
_CHUNK_STEPS = 256
_INV_2_53 = 1.0 / 9007199254740992.0


def philox_key(seed: int, worker: int) -> int:
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 bits, got {seed}")
    if worker < 0:
        raise ValueError("worker id must be nonnegative")
    return seed | (worker << 64)


class SampleStream:
    """Indices drawn with replacement from one worker's shard.

    ``indices(step)`` returns ``batch_size`` positions in ``[0, shard_size)``.
    """

    def __init__(self, seed: int, worker: int, shard_size: int, batch_size: int):
        if shard_size < 1 or batch_size < 1:
            raise ValueError("shard_size and batch_size must be >= 1")
        self.seed = seed
        self.worker = worker
        self.shard_size = shard_size
        self.batch_size = batch_size
        self._key = philox_key(seed, worker)
        self._blocks_per_step = -(-batch_size // _WORDS_PER_BLOCK)
        self._words_per_step = self._blocks_per_step * _WORDS_PER_BLOCK
        self._chunk_start = -1
        self._chunk: np.ndarray | None = None

    def raw(self, step: int) -> np.ndarray:
        """The ``batch_size`` raw 64-bit words owned by ``step``."""
        if step < 0:
            raise ValueError("step must be nonnegative")
        start = step - step % _CHUNK_STEPS
        if start != self._chunk_start:
            bitgen = np.random.Philox(key=self._key, counter=start * self._blocks_per_step)
            words = bitgen.random_raw(_CHUNK_STEPS * self._words_per_step)
            self._chunk = words.reshape(_CHUNK_STEPS, self._words_per_step)
            self._chunk_start = start
        return self._chunk[step - start, : self.batch_size]

    def indices(self, step: int) -> np.ndarray:
        # top 53 bits -> uniform double in [0, 1) -> shard position
        u = (self.raw(step) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return (u * self.shard_size).astype(np.int64)


def data_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for one-off draws (dataset synthesis), derived from the run seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A, stream]))

"""Seeded random streams and a transcript of random decisions.

The training loop owns one main stream (shuffling, augmentation). pAdaIN
draws come from substreams keyed by (seed, layer_id, step) so that enabling
or disabling pAdaIN never shifts the main stream.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MAIN, _LAYER, _SHARED = 0, 1, 2


def main_stream(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _MAIN]))


class Transcript:
    """Running SHA-256 over every random decision, plus an optional event list."""

    def __init__(self, keep_events: bool = False):
        self._h = hashlib.sha256()
        self.events: list[tuple] | None = [] if keep_events else None

    def record(self, *items):
        for it in items:
            if isinstance(it, np.ndarray):
                self._h.update(np.ascontiguousarray(it).tobytes())
            else:
                self._h.update(repr(it).encode())
        if self.events is not None:
            self.events.append(tuple(it.tolist() if isinstance(it, np.ndarray) else it for it in items))

    def hexdigest(self, n: int = 16) -> str:
        return self._h.hexdigest()[:n]


class StepStreams:
    """Per-step source of pAdaIN randomness."""

    def __init__(self, seed: int, step: int, transcript: Transcript | None = None):
        self.seed = seed
        self.step = step
        self.transcript = transcript

    def layer(self, layer_id: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, _LAYER, self.step, layer_id]))

    def shared(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, _SHARED, self.step]))

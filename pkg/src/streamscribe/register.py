"""Bounded FIFO shifting register for live audio chunks.

The register stores the most recent ``chunk_count`` fixed-duration chunks,
tracks the absolute number of chunks ever appended, and exposes the temporal
window its content covers. One producer (ingest) appends; one consumer
(the orchestrator) takes snapshots and flushes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


class RegisterConfigError(ValueError):
    """Invalid register geometry (non-integral chunk sample count, etc.)."""


class ChunkSizeError(ValueError):
    """Appended chunk does not match the configured chunk length."""


def _to_fraction(value) -> Fraction:
    # str(float) keeps decimal intent: 0.1 -> 1/10, not the binary expansion.
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(str(value))


@dataclass(frozen=True)
class RegisterConfig:
    """Geometry of the shifting register.

    ``chunk_count`` chunks of ``chunk_seconds`` each at ``sample_rate`` Hz;
    total capacity is the product of the three.
    """

    chunk_count: int
    chunk_seconds: Fraction
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(self, "chunk_seconds", _to_fraction(self.chunk_seconds))
        if self.chunk_count <= 0:
            raise RegisterConfigError(f"chunk_count must be positive, got {self.chunk_count}")
        if self.chunk_seconds <= 0:
            raise RegisterConfigError(f"chunk_seconds must be positive, got {self.chunk_seconds}")
        if self.sample_rate <= 0:
            raise RegisterConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = self.chunk_seconds * self.sample_rate
        if samples.denominator != 1:
            raise RegisterConfigError(
                f"chunk_seconds * sample_rate must be integral, got {samples}"
            )

    @property
    def chunk_samples(self) -> int:
        return int(self.chunk_seconds * self.sample_rate)


def capacity_samples(config: RegisterConfig) -> int:
    """Total sample capacity: chunk_count * chunk_seconds * sample_rate."""
    return config.chunk_count * config.chunk_samples


@dataclass(frozen=True)
class AudioChunk:
    """One fixed-duration block of mono PCM, normalized floats in [-1, 1]."""

    samples: np.ndarray
    seq: int
    duration_seconds: Fraction = Fraction(0)

    def __post_init__(self):
        if self.seq < 0:
            raise ValueError(f"chunk seq must be non-negative, got {self.seq}")
        object.__setattr__(self, "duration_seconds", _to_fraction(self.duration_seconds))


@dataclass(frozen=True)
class RegisterSnapshot:
    """Immutable copy of the register content at one instant.

    ``last_seq`` is the newest chunk sequence number ever appended (-1 before
    any append); ``window`` is the (start, end) of the content in seconds
    relative to stream start.
    """

    samples: np.ndarray
    last_seq: int
    window: tuple[Fraction, Fraction]

    def __post_init__(self):
        self.samples.flags.writeable = False

    @property
    def window_seconds(self) -> Fraction:
        return self.window[1] - self.window[0]

    def __len__(self) -> int:
        return int(self.samples.size)


@dataclass
class ShiftingRegister:
    config: RegisterConfig
    _chunks: list = field(default_factory=list)
    _appended_total: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def appended_total(self) -> int:
        return self._appended_total

    @property
    def chunk_count_stored(self) -> int:
        return len(self._chunks)

    @property
    def window_end_seconds(self) -> Fraction:
        return self._appended_total * self.config.chunk_seconds

    @property
    def window_start_seconds(self) -> Fraction:
        return (self._appended_total - len(self._chunks)) * self.config.chunk_seconds

    def append(self, chunk: AudioChunk) -> None:
        """Append one chunk, evicting the oldest if the register is full."""
        samples = np.asarray(chunk.samples, dtype=np.float32)
        if samples.ndim != 1 or samples.size != self.config.chunk_samples:
            raise ChunkSizeError(
                f"chunk must hold exactly {self.config.chunk_samples} samples, "
                f"got shape {samples.shape}"
            )
        with self._lock:
            if chunk.seq != self._appended_total:
                raise ValueError(
                    f"chunk seq {chunk.seq} out of order, expected {self._appended_total}"
                )
            self._chunks.append(
                AudioChunk(samples=samples, seq=chunk.seq,
                           duration_seconds=self.config.chunk_seconds)
            )
            if len(self._chunks) > self.config.chunk_count:
                self._chunks.pop(0)
            self._appended_total += 1

    def snapshot(self) -> RegisterSnapshot:
        """Copy of the full current content; later mutations do not affect it."""
        with self._lock:
            if self._chunks:
                samples = np.concatenate([c.samples for c in self._chunks])
            else:
                samples = np.empty(0, dtype=np.float32)
            start = (self._appended_total - len(self._chunks)) * self.config.chunk_seconds
            end = self._appended_total * self.config.chunk_seconds
            return RegisterSnapshot(
                samples=samples,
                last_seq=self._appended_total - 1,
                window=(start, end),
            )

    def latest_samples(self, n_chunks: int) -> np.ndarray:
        """Copy of the newest ``n_chunks`` chunks' samples (fewer if not stored)."""
        with self._lock:
            tail = self._chunks[-n_chunks:] if n_chunks > 0 else []
            if not tail:
                return np.empty(0, dtype=np.float32)
            return np.concatenate([c.samples for c in tail])

    def flush(self) -> None:
        """Empty the content; the append counter and timeline position persist."""
        with self._lock:
            self._chunks.clear()

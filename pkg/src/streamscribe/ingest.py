"""Live audio ingestion: RTP listener and paced file replay.

Both paths assemble fixed-duration chunks and append them to the shifting
register as the single producer. The RTP path parses RFC 3550 headers with
L16 (16-bit big-endian mono) payloads, reorders packets within a small
window, and zero-fills losses by timestamp arithmetic so the chunk cadence
never drifts.
"""

from __future__ import annotations

import io
import socket
import struct
import threading
import time
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .register import AudioChunk, ShiftingRegister

REORDER_WINDOW_PACKETS = 4
_MAX_FILL_SECONDS = 30  # larger timestamp jumps are treated as a stream reset


class IngestError(Exception):
    pass


class RtpParseError(IngestError):
    pass


@dataclass(frozen=True)
class IngestConfig:
    mode: str  # "rtp" | "file_replay"
    sample_rate: int
    rtp_port: int = 0
    payload_format: str = "L16"
    replay_path: str | None = None
    replay_pacing: str = "unpaced"  # "realtime" | "unpaced"

    def __post_init__(self):
        if self.mode not in ("rtp", "file_replay"):
            raise IngestError(f"unknown ingest mode {self.mode!r}")
        if self.payload_format != "L16":
            raise IngestError(f"unsupported payload format {self.payload_format!r}")
        if self.replay_pacing not in ("realtime", "unpaced"):
            raise IngestError(f"unknown replay pacing {self.replay_pacing!r}")
        if self.mode == "file_replay" and not self.replay_path:
            raise IngestError("file_replay mode requires replay_path")


@dataclass(frozen=True)
class RtpPacketView:
    sequence_number: int
    timestamp: int
    payload: bytes
    payload_type: int = 0
    marker: bool = False


@dataclass
class IngestStats:
    packets_received: int = 0
    packets_lost: int = 0
    packets_late: int = 0
    packets_malformed: int = 0
    chunks_appended: int = 0
    samples_received: int = 0
    samples_zero_filled: int = 0
    remainder_samples: int = 0


def parse_rtp_packet(data: bytes) -> RtpPacketView:
    """Parse an RFC 3550 packet; payload must be even-length L16."""
    if len(data) < 12:
        raise RtpParseError(f"packet too short for an RTP header: {len(data)} bytes")
    b0, b1, seq, ts, _ssrc = struct.unpack_from("!BBHII", data)
    if b0 >> 6 != 2:
        raise RtpParseError(f"unsupported RTP version {b0 >> 6}")
    offset = 12 + 4 * (b0 & 0x0F)
    if (b0 >> 4) & 1:  # header extension
        if len(data) < offset + 4:
            raise RtpParseError("truncated header extension")
        ext_words = struct.unpack_from("!HH", data, offset)[1]
        offset += 4 + 4 * ext_words
    end = len(data)
    if (b0 >> 5) & 1:  # padding
        pad = data[-1]
        if pad == 0 or offset + pad > end:
            raise RtpParseError("invalid padding length")
        end -= pad
    if offset > end:
        raise RtpParseError("header overruns packet")
    payload = data[offset:end]
    if len(payload) % 2:
        raise RtpParseError("L16 payload length must be even")
    return RtpPacketView(sequence_number=seq, timestamp=ts, payload=payload,
                         payload_type=b1 & 0x7F, marker=bool(b1 >> 7))


def l16_to_float(payload: bytes) -> np.ndarray:
    return np.frombuffer(payload, dtype=">i2").astype(np.float32) / 32768.0


class RtpReorderer:
    """Restores packet order within a bounded window, zero-filling gaps.

    Holds at most ``REORDER_WINDOW_PACKETS`` out-of-order packets; when the
    window overflows, the stream skips to the earliest held packet and the
    missing span is synthesized as zeros sized by the RTP timestamp delta.
    """

    def __init__(self, max_fill_samples: int, window: int = REORDER_WINDOW_PACKETS):
        self.window = window
        self.max_fill_samples = max_fill_samples
        self.packets_lost = 0
        self.packets_late = 0
        self.samples_zero_filled = 0
        self._pending: dict[int, tuple[int, np.ndarray]] = {}
        self._expected_seq: int | None = None
        self._expected_ts = 0

    def push(self, seq: int, ts: int, samples: np.ndarray) -> list[np.ndarray]:
        if self._expected_seq is None:
            self._expected_seq = seq
            self._expected_ts = ts
        delta = (seq - self._expected_seq) & 0xFFFF
        if delta == 0:
            out = [samples]
            self._advance(ts, samples.size)
            out.extend(self._drain_consecutive())
            return out
        if delta < 0x8000:
            self._pending[seq] = (ts, samples)
            if len(self._pending) > self.window:
                return self._skip_to_earliest()
            return []
        self.packets_late += 1
        return []

    def flush(self) -> list[np.ndarray]:
        out = []
        while self._pending:
            out.extend(self._skip_to_earliest())
        return out

    def _advance(self, ts: int, n_samples: int) -> None:
        self._expected_seq = (self._expected_seq + 1) & 0xFFFF
        self._expected_ts = (ts + n_samples) & 0xFFFFFFFF

    def _drain_consecutive(self) -> list[np.ndarray]:
        out = []
        while self._expected_seq in self._pending:
            ts, samples = self._pending.pop(self._expected_seq)
            out.append(samples)
            self._advance(ts, samples.size)
        return out

    def _skip_to_earliest(self) -> list[np.ndarray]:
        target = min(self._pending, key=lambda s: (s - self._expected_seq) & 0xFFFF)
        ts_target = self._pending[target][0]
        gap = (ts_target - self._expected_ts) & 0xFFFFFFFF
        out = []
        if 0 < gap <= self.max_fill_samples:
            out.append(np.zeros(gap, dtype=np.float32))
            self.samples_zero_filled += gap
        self.packets_lost += (target - self._expected_seq) & 0xFFFF
        self._expected_seq = target
        self._expected_ts = ts_target
        out.extend(self._drain_consecutive())
        return out


class ChunkAssembler:
    """Accumulates samples and appends full chunks to the register."""

    def __init__(self, register: ShiftingRegister):
        self.register = register
        self.chunks_appended = 0
        self._parts: list[np.ndarray] = []
        self._buffered = 0

    @property
    def remainder_samples(self) -> int:
        return self._buffered

    def push(self, samples: np.ndarray) -> None:
        if samples.size:
            self._parts.append(samples)
            self._buffered += samples.size
        chunk_samples = self.register.config.chunk_samples
        while self._buffered >= chunk_samples:
            merged = np.concatenate(self._parts)
            chunk = merged[:chunk_samples]
            rest = merged[chunk_samples:]
            self._parts = [rest] if rest.size else []
            self._buffered = rest.size
            self.register.append(AudioChunk(
                samples=chunk,
                seq=self.register.appended_total,
                duration_seconds=self.register.config.chunk_seconds,
            ))
            self.chunks_appended += 1


def load_replay_audio(path: str | Path, sample_rate: int) -> np.ndarray:
    """Read a WAV (PCM16 mono at the configured rate) or headerless PCM16LE
    file into normalized float32 samples."""
    raw = Path(path).read_bytes()
    if raw[:4] == b"RIFF":
        with wave.open(io.BytesIO(raw), "rb") as wf:
            if wf.getnchannels() != 1:
                raise IngestError(f"replay WAV must be mono, has {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise IngestError("replay WAV must be 16-bit PCM")
            if wf.getframerate() != sample_rate:
                raise IngestError(
                    f"replay WAV rate {wf.getframerate()} != configured {sample_rate}"
                )
            frames = wf.readframes(wf.getnframes())
        return np.frombuffer(frames, dtype="<i2").astype(np.float32) / 32768.0
    if len(raw) % 2:
        raise IngestError("headerless PCM16 file has odd byte length")
    return np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0


@dataclass
class IngestHandle:
    stats: IngestStats
    _thread: threading.Thread
    _stop: threading.Event
    _sock: socket.socket | None = None
    _stopped: bool = field(default=False)

    def stop(self) -> IngestStats:
        """Halt ingestion and return final counters. Idempotent."""
        if not self._stopped:
            self._stop.set()
            self._thread.join(timeout=10.0)
            if self._sock is not None:
                self._sock.close()
            self._stopped = True
        return self.stats

    @property
    def done(self) -> bool:
        return not self._thread.is_alive()

    def join(self, timeout: float | None = None) -> None:
        self._thread.join(timeout)


def _file_replay_worker(config: IngestConfig, assembler: ChunkAssembler,
                        stats: IngestStats, stop: threading.Event,
                        audio: np.ndarray,
                        gate: Callable[[], bool] | None) -> None:
    chunk_samples = assembler.register.config.chunk_samples
    chunk_seconds = chunk_samples / config.sample_rate
    next_deadline = time.monotonic()
    for start in range(0, audio.size, chunk_samples):
        if config.replay_pacing == "realtime":
            next_deadline += chunk_seconds
            while not stop.is_set():
                remaining = next_deadline - time.monotonic()
                if remaining <= 0:
                    break
                time.sleep(min(remaining, 0.05))
        elif gate is not None:
            while not stop.is_set() and not gate():
                time.sleep(0.001)
        if stop.is_set():
            break
        piece = audio[start:start + chunk_samples]
        stats.samples_received += int(piece.size)
        assembler.push(piece)
        stats.chunks_appended = assembler.chunks_appended
    stats.chunks_appended = assembler.chunks_appended
    stats.remainder_samples = assembler.remainder_samples


def _rtp_worker(config: IngestConfig, assembler: ChunkAssembler,
                stats: IngestStats, stop: threading.Event,
                sock: socket.socket) -> None:
    reorderer = RtpReorderer(max_fill_samples=_MAX_FILL_SECONDS * config.sample_rate)
    sock.settimeout(0.1)

    def feed(pieces: list[np.ndarray]) -> None:
        for piece in pieces:
            assembler.push(piece)

    while not stop.is_set():
        try:
            data, _addr = sock.recvfrom(65536)
        except socket.timeout:
            continue
        except OSError:
            break
        try:
            pkt = parse_rtp_packet(data)
        except RtpParseError:
            stats.packets_malformed += 1
            continue
        stats.packets_received += 1
        samples = l16_to_float(pkt.payload)
        stats.samples_received += int(samples.size)
        feed(reorderer.push(pkt.sequence_number, pkt.timestamp, samples))

    feed(reorderer.flush())
    stats.packets_lost = reorderer.packets_lost
    stats.packets_late = reorderer.packets_late
    stats.samples_zero_filled = reorderer.samples_zero_filled
    stats.chunks_appended = assembler.chunks_appended
    stats.remainder_samples = assembler.remainder_samples


def start_ingest(config: IngestConfig, register: ShiftingRegister, *,
                 sock: socket.socket | None = None,
                 gate: Callable[[], bool] | None = None) -> IngestHandle:
    """Begin background ingestion into the register.

    For RTP mode a pre-bound socket may be supplied (the service binds at
    warmup so port conflicts surface early); otherwise one is bound here.
    ``gate`` is a non-blocking consumer-readiness check consulted before
    each unpaced replay append, so a slow consumer is never outrun; live
    audio is never gated.
    """
    if config.sample_rate != register.config.sample_rate:
        raise IngestError(
            f"ingest rate {config.sample_rate} != register rate {register.config.sample_rate}"
        )
    stats = IngestStats()
    stop = threading.Event()

    if config.mode == "file_replay":
        audio = load_replay_audio(config.replay_path, config.sample_rate)
        assembler = ChunkAssembler(register)
        thread = threading.Thread(
            target=_file_replay_worker,
            args=(config, assembler, stats, stop, audio, gate),
            daemon=True, name="ingest-replay",
        )
        thread.start()
        return IngestHandle(stats=stats, _thread=thread, _stop=stop)

    if sock is None:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.bind(("0.0.0.0", config.rtp_port))
        except OSError:
            sock.close()
            raise
    assembler = ChunkAssembler(register)
    thread = threading.Thread(
        target=_rtp_worker, args=(config, assembler, stats, stop, sock),
        daemon=True, name="ingest-rtp",
    )
    thread.start()
    return IngestHandle(stats=stats, _thread=thread, _stop=stop, _sock=sock)

"""Transcriber backends operating on register snapshots.

Two implementations share one duck-typed surface (``transcribe(snapshot)``,
``close()``):

* ``ScriptedTranscriber`` - deterministic word-timeline backend for tests
  and evaluation plumbing.
* ``ExternalTranscriber`` - client for a separate transcriber process
  speaking newline-delimited JSON on its standard streams (the real model
  lives in such a process).

Wire protocol (bit-exact):
  request  ``{"id":N,"sample_rate":16000,"audio":"<b64 pcm16le>","language":"en","vad_enabled":true,"backend_options":{...}}``
  response ``{"id":N,"text":"...","segments":[[s,e,"..."],...],"model_time":T}``
  error    ``{"id":N,"error":"message"}``
  handshake line on startup: ``{"ready":true,"backend":"<name>"}``
"""

from __future__ import annotations

import base64
import json
import queue
import subprocess
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .register import RegisterSnapshot


class TranscriberError(Exception):
    pass


class BackendStartError(TranscriberError):
    """Backend process could not be launched or never handshook."""


class BackendProtocolError(TranscriberError):
    """Malformed or out-of-contract traffic on the wire."""


class BackendTimeoutError(TranscriberError):
    """No response within the configured timeout; retryable."""


class BackendReportedError(TranscriberError):
    """Backend answered with an error line."""


@dataclass(frozen=True)
class Transcription:
    text: str
    segments: tuple[tuple[float, float, str], ...] = ()
    model_time_seconds: float = 0.0
    vad_time_seconds: float = 0.0


def float_to_pcm16(samples: np.ndarray) -> bytes:
    """Normalized floats -> little-endian int16 bytes (clipping applied)."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    ints = np.rint(x * 32768.0)
    np.clip(ints, -32768.0, 32767.0, out=ints)
    return ints.astype("<i2").tobytes()


def pcm16_to_float(data: bytes) -> np.ndarray:
    """Little-endian int16 bytes -> float32 in [-1, 1). Inverse of
    ``float_to_pcm16`` for values that originated as int16."""
    return np.frombuffer(data, dtype="<i2").astype(np.float32) / 32768.0


# ---------------------------------------------------------------------------
# scripted backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScriptedTimeline:
    """Word midpoints on the stream timeline; the scripted backend emits the
    words whose midpoints fall inside the transcribed window."""

    entries: tuple[tuple[float, str], ...]

    def __post_init__(self):
        times = [t for t, _ in self.entries]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("timeline midpoints must be strictly increasing")

    @classmethod
    def from_pairs(cls, pairs) -> "ScriptedTimeline":
        return cls(entries=tuple((float(t), str(w)) for t, w in pairs))

    @classmethod
    def evenly_spaced(cls, text: str, duration_seconds: float) -> "ScriptedTimeline":
        """Spread the words of ``text`` uniformly over [0, duration)."""
        words = text.split()
        if not words:
            return cls(entries=())
        step = duration_seconds / len(words)
        return cls(entries=tuple((step * (i + 0.5), w) for i, w in enumerate(words)))

    @property
    def text(self) -> str:
        return " ".join(w for _, w in self.entries)


def scripted_transcribe(timeline: ScriptedTimeline,
                        window: tuple[Fraction, Fraction]) -> Transcription:
    """Words whose midpoints lie in [start, end), space-joined, in order."""
    start, end = window
    hits = [(t, w) for t, w in timeline.entries if start <= t < end]
    text = " ".join(w for _, w in hits)
    segments = tuple((float(t - start), float(t - start), w) for t, w in hits)
    return Transcription(text=text, segments=segments)


class ScriptedTranscriber:
    """Pure-function backend over a fixed word timeline.

    ``delay_per_audio_second`` simulates a model whose response time is
    proportional to the transcribed audio length.
    """

    name = "scripted"

    def __init__(self, timeline: ScriptedTimeline, delay_per_audio_second: float = 0.0):
        self.timeline = timeline
        self.delay_per_audio_second = float(delay_per_audio_second)
        self.calls = 0

    def transcribe(self, snapshot: RegisterSnapshot) -> Transcription:
        self.calls += 1
        t0 = time.perf_counter()
        if self.delay_per_audio_second > 0.0:
            time.sleep(self.delay_per_audio_second * float(snapshot.window_seconds))
        result = scripted_transcribe(self.timeline, snapshot.window)
        return Transcription(text=result.text, segments=result.segments,
                             model_time_seconds=time.perf_counter() - t0)

    def update_options(self, options: dict) -> None:
        if "timeline" in options:
            self.timeline = ScriptedTimeline.from_pairs(options["timeline"])
        if "delay_per_audio_second" in options:
            self.delay_per_audio_second = float(options["delay_per_audio_second"])

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# external backend client
# ---------------------------------------------------------------------------

@dataclass
class TranscribeRequest:
    id: int
    sample_rate: int
    audio: str  # base64 pcm16le
    language: str | None = None
    vad_enabled: bool = True
    backend_options: dict = field(default_factory=dict)

    def to_wire(self) -> str:
        body = {
            "id": self.id,
            "sample_rate": self.sample_rate,
            "audio": self.audio,
            "language": self.language,
            "vad_enabled": self.vad_enabled,
            "backend_options": self.backend_options,
        }
        return json.dumps(body, separators=(",", ":"))


class ExternalTranscriber:
    """Serialized line-JSON client around a child transcriber process."""

    name = "external"

    def __init__(self, command: list[str], sample_rate: int, *,
                 language: str | None = None, vad_enabled: bool = True,
                 backend_options: dict | None = None,
                 timeout: float = 30.0, handshake_timeout: float = 30.0):
        self.command = list(command)
        self.sample_rate = sample_rate
        self.language = language
        self.vad_enabled = vad_enabled
        self.backend_options = dict(backend_options or {})
        self.timeout = timeout
        self._id = 0
        self._lock = threading.Lock()
        self._lines: queue.Queue = queue.Queue()
        try:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1,
            )
        except OSError as exc:
            raise BackendStartError(f"cannot launch backend {self.command!r}: {exc}") from exc
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name="backend-reader")
        self._reader.start()
        self.backend_name = self._handshake(handshake_timeout)

    def _read_loop(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF marker

    def _next_line(self, timeout: float) -> str:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise BackendTimeoutError(
                f"no backend response within {timeout:.1f}s"
            ) from None
        if line is None:
            raise BackendProtocolError("backend closed its output stream")
        return line

    def _handshake(self, timeout: float) -> str:
        try:
            line = self._next_line(timeout)
        except TranscriberError as exc:
            self.close()
            raise BackendStartError(f"backend handshake failed: {exc}") from exc
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            self.close()
            raise BackendStartError(f"invalid handshake line: {line!r}") from exc
        if not msg.get("ready"):
            self.close()
            raise BackendStartError(f"backend not ready: {msg!r}")
        return str(msg.get("backend", "unknown"))

    def update_options(self, options: dict) -> None:
        with self._lock:
            self.backend_options.update(options)

    def transcribe(self, snapshot: RegisterSnapshot) -> Transcription:
        with self._lock:
            self._id += 1
            request = TranscribeRequest(
                id=self._id,
                sample_rate=self.sample_rate,
                audio=base64.b64encode(float_to_pcm16(snapshot.samples)).decode("ascii"),
                language=self.language,
                vad_enabled=self.vad_enabled,
                backend_options=dict(self.backend_options),
            )
            try:
                self._proc.stdin.write(request.to_wire() + "\n")
                self._proc.stdin.flush()
            except (OSError, ValueError) as exc:
                raise BackendProtocolError(f"cannot write to backend: {exc}") from exc
            return self._read_response(request.id)

    def _read_response(self, request_id: int) -> Transcription:
        deadline = time.monotonic() + self.timeout
        while True:
            line = self._next_line(max(0.0, deadline - time.monotonic()))
            try:
                msg = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BackendProtocolError(f"malformed response line: {line!r}") from exc
            got = msg.get("id")
            if got != request_id:
                # Stale answer to a request we already timed out on: skip it.
                if isinstance(got, int) and got < request_id:
                    continue
                raise BackendProtocolError(
                    f"response id {got!r} does not match request id {request_id}"
                )
            if "error" in msg:
                raise BackendReportedError(str(msg["error"]))
            if "text" not in msg:
                raise BackendProtocolError(f"response missing text field: {line!r}")
            segments = tuple(
                (float(s), float(e), str(t)) for s, e, t in msg.get("segments") or ()
            )
            return Transcription(
                text=str(msg["text"]),
                segments=segments,
                model_time_seconds=float(msg.get("model_time", 0.0)),
                vad_time_seconds=float(msg.get("vad_time", 0.0)),
            )

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.terminate()
            proc.wait(timeout=5.0)
        except (OSError, subprocess.TimeoutExpired):
            proc.kill()

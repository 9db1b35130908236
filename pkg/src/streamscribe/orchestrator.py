"""Session loop tying register, VAD gate, transcriber and suggestion engine.

Each iteration handles every chunk appended since the last one it processed:
gate the newest audio with the pre-transcription VAD, flush the register on
silence, otherwise re-transcribe the whole buffered window, filter repeated
token runs, and emit the suggestion relative to the previous transcription.
Per-step wall-clock timings are recorded on every event.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

from .register import ShiftingRegister
from .textproc import detect_hallucination, generate_suggestion
from .transcriber import TranscriberError
from .vad import EnergyVad


@dataclass(frozen=True)
class TimingRecord:
    pre_vad_seconds: float = 0.0
    vad_seconds: float = 0.0
    trx_seconds: float = 0.0
    suggestion_seconds: float = 0.0
    total_seconds: float = 0.0


@dataclass(frozen=True)
class TranscriptEvent:
    chunk_seq: int
    status: str  # "text" | "silence" | "filtered" | "error"
    suggestion: str
    full_trx: str
    timing: TimingRecord
    window: tuple[float, float]  # seconds covered by the transcribed snapshot
    error: str = ""


@dataclass
class HallucinationConfig:
    max_ngram: int = 4
    repeat_threshold: int = 5


class TranscriptionSession:
    """Single-consumer polling loop over one register.

    The loop runs in its own thread (``start``/``stop``); ``process_pending``
    is also callable directly for deterministic step-by-step tests.
    """

    def __init__(self, register: ShiftingRegister, vad: EnergyVad, transcriber, *,
                 hallucination: HallucinationConfig | None = None,
                 poll_interval: float = 0.1,
                 on_event=None):
        self.register = register
        self.vad = vad
        self.transcriber = transcriber
        self.hallucination = hallucination or HallucinationConfig()
        self.poll_interval = poll_interval
        self.on_event = on_event

        self.last_trx = ""
        self.last_processed_seq = -1
        self.events: list[TranscriptEvent] = []
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    # -- one poll-gate-transcribe-suggest iteration --------------------------

    def pending_chunks(self) -> int:
        return self.register.appended_total - 1 - self.last_processed_seq

    def process_pending(self) -> TranscriptEvent | None:
        """Process all chunks appended since the last handled one.

        Returns the emitted event, or None when nothing is pending.
        """
        reg = self.register
        latest = reg.appended_total - 1
        if latest <= self.last_processed_seq:
            return None
        total_start = time.perf_counter()

        # Newest audio only: with several pending chunks the gate covers all
        # of them, so a burst ending in speech is never mistaken for silence.
        n_new = min(latest - self.last_processed_seq, reg.chunk_count_stored)
        newest = reg.latest_samples(n_new)
        t0 = time.perf_counter()
        voiced = self.vad.has_voice(newest)
        pre_vad_seconds = time.perf_counter() - t0

        if not voiced:
            reg.flush()
            self.last_trx = ""
            self.last_processed_seq = latest
            end = float(reg.window_end_seconds)
            event = TranscriptEvent(
                chunk_seq=latest, status="silence", suggestion="", full_trx="",
                timing=TimingRecord(pre_vad_seconds=pre_vad_seconds,
                                    total_seconds=time.perf_counter() - total_start),
                window=(end, end),
            )
            return self._emit(event)

        snapshot = reg.snapshot()
        t0 = time.perf_counter()
        try:
            transcription = self.transcriber.transcribe(snapshot)
        except TranscriberError as exc:
            # The audio stays buffered; the next voiced chunk re-covers it,
            # so the lost text is recovered by the following suggestion.
            self.last_processed_seq = latest
            event = TranscriptEvent(
                chunk_seq=latest, status="error", suggestion="", full_trx=self.last_trx,
                timing=TimingRecord(pre_vad_seconds=pre_vad_seconds,
                                    trx_seconds=time.perf_counter() - t0,
                                    total_seconds=time.perf_counter() - total_start),
                window=(float(snapshot.window[0]), float(snapshot.window[1])),
                error=str(exc),
            )
            return self._emit(event)
        trx_seconds = time.perf_counter() - t0

        t0 = time.perf_counter()
        verdict = detect_hallucination(
            transcription.text,
            max_ngram=self.hallucination.max_ngram,
            repeat_threshold=self.hallucination.repeat_threshold,
        )
        full_text = verdict.filtered_text if verdict.detected else transcription.text
        suggestion = generate_suggestion(full_text, self.last_trx)
        suggestion_seconds = time.perf_counter() - t0

        self.last_trx = full_text
        self.last_processed_seq = snapshot.last_seq
        event = TranscriptEvent(
            chunk_seq=snapshot.last_seq,
            status="filtered" if verdict.detected else "text",
            suggestion=suggestion.text,
            full_trx=full_text,
            timing=TimingRecord(
                pre_vad_seconds=pre_vad_seconds,
                vad_seconds=transcription.vad_time_seconds,
                trx_seconds=trx_seconds,
                suggestion_seconds=suggestion_seconds,
                total_seconds=time.perf_counter() - total_start,
            ),
            window=(float(snapshot.window[0]), float(snapshot.window[1])),
        )
        return self._emit(event)

    def _emit(self, event: TranscriptEvent) -> TranscriptEvent:
        self.events.append(event)
        if self.on_event is not None:
            self.on_event(event)
        return event

    # -- background loop -----------------------------------------------------

    def start(self) -> None:
        if self._thread is not None:
            raise RuntimeError("session loop already started")
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="transcription-session")
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.is_set():
            if self.process_pending() is None:
                self._stop.wait(self.poll_interval)

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=30.0)
            self._thread = None

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def consumer_gate(self):
        """Non-blocking lockstep gate for unpaced replay: the next chunk may
        be appended only once every appended chunk has been processed.

        This reproduces the real-time steady state (one new chunk per
        iteration, so consecutive windows always overlap) at replay speed,
        and makes event streams deterministic. The ingest worker owns the
        waiting; its stop signal interrupts it.
        """
        return lambda: self.pending_chunks() == 0

    # -- results ---------------------------------------------------------------

    def assemble_transcript(self) -> str:
        """Space-join of all non-empty suggestions in event order."""
        return " ".join(e.suggestion for e in self.events if e.suggestion)

    def timing_summary(self) -> dict:
        scored = [e for e in self.events if e.status in ("text", "filtered")]
        if not scored:
            return {"events": len(self.events), "scored_events": 0}
        n = len(scored)
        return {
            "events": len(self.events),
            "scored_events": n,
            "pre_vad_mean": sum(e.timing.pre_vad_seconds for e in scored) / n,
            "vad_mean": sum(e.timing.vad_seconds for e in scored) / n,
            "trx_mean": sum(e.timing.trx_seconds for e in scored) / n,
            "suggestion_mean": sum(e.timing.suggestion_seconds for e in scored) / n,
            "total_mean": sum(e.timing.total_seconds for e in scored) / n,
        }

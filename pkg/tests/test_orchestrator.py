import time

import numpy as np
import pytest

from streamscribe.orchestrator import HallucinationConfig, TranscriptionSession
from streamscribe.register import AudioChunk, RegisterConfig, ShiftingRegister
from streamscribe.transcriber import (
    ScriptedTimeline,
    ScriptedTranscriber,
    TranscriberError,
    Transcription,
)
from streamscribe.vad import EnergyVad
from streamscribe.evalkit.harness import random_words

RATE = 1000  # small rate keeps synthetic chunks cheap


def build_session(chunk_seconds=4, chunk_count=5, words_text=None,
                  total_seconds=40.0, transcriber=None, **kwargs):
    reg = ShiftingRegister(RegisterConfig(chunk_count, chunk_seconds, RATE))
    if transcriber is None:
        rng = np.random.default_rng(99)
        text = words_text or " ".join(random_words(20, rng))
        transcriber = ScriptedTranscriber(
            ScriptedTimeline.evenly_spaced(text, total_seconds))
    session = TranscriptionSession(reg, EnergyVad(RATE), transcriber, **kwargs)
    return reg, session, transcriber


def voiced_chunk(reg, seq, seed=0):
    rng = np.random.default_rng(seed + seq)
    samples = rng.uniform(-0.3, 0.3, reg.config.chunk_samples).astype(np.float32)
    return AudioChunk(samples=samples, seq=seq)


def silent_chunk(reg, seq):
    return AudioChunk(samples=np.zeros(reg.config.chunk_samples, dtype=np.float32),
                      seq=seq)


class TestProcessPending:
    def test_nothing_pending_is_noop(self):
        reg, session, _ = build_session()
        assert session.process_pending() is None
        assert session.events == []

    def test_first_voiced_chunk_suggestion_is_full_transcription(self):
        reg, session, _ = build_session()
        reg.append(voiced_chunk(reg, 0))
        event = session.process_pending()
        assert event.status == "text"
        assert event.suggestion == event.full_trx
        assert event.chunk_seq == 0

    def test_silent_chunk_flushes_without_transcribing(self):
        reg, session, trx = build_session()
        reg.append(voiced_chunk(reg, 0))
        session.process_pending()
        calls_before = trx.calls
        reg.append(silent_chunk(reg, 1))
        event = session.process_pending()
        assert event.status == "silence"
        assert event.suggestion == ""
        assert trx.calls == calls_before  # silence gate: no transcription call
        assert reg.chunk_count_stored == 0
        assert session.last_trx == ""

    def test_after_silence_next_suggestion_is_full_transcription(self):
        reg, session, _ = build_session()
        reg.append(voiced_chunk(reg, 0))
        first = session.process_pending()
        reg.append(silent_chunk(reg, 1))
        session.process_pending()
        reg.append(voiced_chunk(reg, 2))
        event = session.process_pending()
        assert event.status == "text"
        assert event.suggestion == event.full_trx  # no phantom overlap

    def test_scripted_clip_chunk_by_chunk_reproduces_script(self):
        text = " ".join(random_words(24, np.random.default_rng(5)))
        reg, session, trx = build_session(chunk_seconds=4, chunk_count=5,
                                          words_text=text, total_seconds=24.0)
        for seq in range(6):
            reg.append(voiced_chunk(reg, seq))
            session.process_pending()
        assert session.assemble_transcript() == text

    def test_catchup_single_transcription_covers_all_pending(self):
        text = " ".join(random_words(20, np.random.default_rng(6)))
        reg, session, trx = build_session(words_text=text, total_seconds=40.0)
        reg.append(voiced_chunk(reg, 0))
        session.process_pending()
        calls = trx.calls
        reg.append(voiced_chunk(reg, 1))
        reg.append(voiced_chunk(reg, 2))
        event = session.process_pending()
        assert trx.calls == calls + 1  # one pass for both chunks
        assert event.chunk_seq == 2
        assert event.window == (0.0, 12.0)
        # suggestion covers both chunks' new words
        words = text.split()
        per_chunk = 40.0 / 20  # one word per 2 s
        expected_new = [w for i, w in enumerate(words)
                        if 4.0 <= (i + 0.5) * per_chunk < 12.0]
        assert event.suggestion.split() == expected_new

    def test_no_chunk_skipped_or_processed_twice(self):
        reg, session, _ = build_session()
        covered = []
        last = -1
        appended = 0
        rng = np.random.default_rng(11)
        for _ in range(10):
            for _ in range(int(rng.integers(1, 4))):
                reg.append(voiced_chunk(reg, appended))
                appended += 1
            event = session.process_pending()
            covered.append((last + 1, event.chunk_seq))
            last = event.chunk_seq
        # contiguous, non-overlapping coverage of every appended seq
        flat = [s for lo, hi in covered for s in range(lo, hi + 1)]
        assert flat == list(range(appended))

    def test_ramp_up_window_lengths(self):
        reg, session, _ = build_session(chunk_seconds=4, chunk_count=5)
        lengths = []
        for seq in range(6):
            reg.append(voiced_chunk(reg, seq))
            event = session.process_pending()
            lengths.append(event.window[1] - event.window[0])
        assert lengths == [4.0, 8.0, 12.0, 16.0, 20.0, 20.0]

    def test_steady_state_window_is_full_buffer(self):
        reg, session, _ = build_session(chunk_seconds=4, chunk_count=5)
        for seq in range(8):
            reg.append(voiced_chunk(reg, seq))
            event = session.process_pending()
        assert event.window == (12.0, 32.0)
        assert event.window[1] - event.window[0] == 20.0

    def test_timing_record_populated(self):
        reg, session, _ = build_session()
        reg.append(voiced_chunk(reg, 0))
        event = session.process_pending()
        timing = event.timing
        assert timing.total_seconds >= timing.trx_seconds
        assert timing.pre_vad_seconds >= 0
        assert timing.suggestion_seconds >= 0
        assert timing.total_seconds >= (timing.pre_vad_seconds + timing.trx_seconds
                                        + timing.suggestion_seconds) - 0.005

    def test_hallucinated_output_is_filtered(self):
        class RepeatingBackend:
            name = "repeat"
            calls = 0

            def transcribe(self, snapshot):
                return Transcription(text="bad bad bad bad bad bad tail")

            def close(self):
                pass

        reg, session, _ = build_session(transcriber=RepeatingBackend())
        reg.append(voiced_chunk(reg, 0))
        event = session.process_pending()
        assert event.status == "filtered"
        assert event.full_trx == "bad tail"
        assert event.suggestion == "bad tail"

    def test_hallucination_threshold_config(self):
        class RepeatingBackend:
            name = "repeat"

            def transcribe(self, snapshot):
                return Transcription(text="x x x end")

            def close(self):
                pass

        reg, session, _ = build_session(
            transcriber=RepeatingBackend(),
            hallucination=HallucinationConfig(max_ngram=2, repeat_threshold=3))
        reg.append(voiced_chunk(reg, 0))
        event = session.process_pending()
        assert event.status == "filtered"
        assert event.full_trx == "x end"

    def test_backend_error_emits_error_event_and_recovers(self):
        class FlakyBackend:
            name = "flaky"

            def __init__(self, inner):
                self.inner = inner
                self.calls = 0

            def transcribe(self, snapshot):
                self.calls += 1
                if self.calls == 1:
                    raise TranscriberError("backend exploded")
                return self.inner.transcribe(snapshot)

            def close(self):
                pass

        text = " ".join(random_words(10, np.random.default_rng(2)))
        inner = ScriptedTranscriber(ScriptedTimeline.evenly_spaced(text, 40.0))
        reg, session, _ = build_session(transcriber=FlakyBackend(inner))
        reg.append(voiced_chunk(reg, 0))
        event = session.process_pending()
        assert event.status == "error"
        assert "exploded" in event.error
        # next chunk recovers the buffered text: audio for chunk 0 is still
        # in the register, so the suggestion covers both chunks
        reg.append(voiced_chunk(reg, 1))
        event = session.process_pending()
        assert event.status == "text"
        words = text.split()
        expected = [w for i, w in enumerate(words) if (i + 0.5) * 4.0 < 8.0]
        assert event.suggestion.split() == expected
        assert session.assemble_transcript() == event.suggestion

    def test_grid_of_configs_reproduces_script_exactly(self):
        # exhaustive over chunk_seconds x chunk_count with no silence
        rng = np.random.default_rng(17)
        text = " ".join(random_words(30, rng))
        for chunk_seconds in (2, 4, 6):
            for chunk_count in (3, 5):
                reg, session, _ = build_session(
                    chunk_seconds=chunk_seconds, chunk_count=chunk_count,
                    words_text=text, total_seconds=58.0)
                n_chunks = int(60 / chunk_seconds)
                for seq in range(n_chunks):
                    reg.append(voiced_chunk(reg, seq))
                    session.process_pending()
                assert session.assemble_transcript() == text, \
                    (chunk_seconds, chunk_count)


class TestRunLoop:
    def test_stop_with_no_audio_yields_zero_events(self):
        reg, session, _ = build_session(poll_interval=0.01)
        session.start()
        time.sleep(0.08)
        session.stop()
        assert session.events == []

    def test_background_loop_processes_appends(self):
        text = " ".join(random_words(12, np.random.default_rng(8)))
        reg, session, _ = build_session(words_text=text, total_seconds=24.0,
                                        chunk_seconds=4, chunk_count=5,
                                        poll_interval=0.005)
        session.start()
        try:
            for seq in range(6):
                reg.append(voiced_chunk(reg, seq))
                deadline = time.monotonic() + 5.0
                while session.pending_chunks() > 0 and time.monotonic() < deadline:
                    time.sleep(0.002)
        finally:
            session.stop()
        assert session.assemble_transcript() == text

    def test_start_twice_rejected(self):
        reg, session, _ = build_session()
        session.start()
        try:
            with pytest.raises(RuntimeError):
                session.start()
        finally:
            session.stop()

    def test_on_event_callback_sees_every_event_in_order(self):
        seen = []
        reg, session, _ = build_session(on_event=seen.append)
        for seq in range(3):
            reg.append(voiced_chunk(reg, seq))
            session.process_pending()
        assert seen == session.events

    def test_consumer_gate_tracks_pending_chunks(self):
        reg, session, _ = build_session(poll_interval=0.005)
        gate = session.consumer_gate()
        assert gate() is True  # nothing pending
        reg.append(voiced_chunk(reg, 0))
        assert gate() is False  # unprocessed chunk blocks the producer
        session.process_pending()
        assert gate() is True

"""Dataset replay harness: streams clips through a live service instance and
scores the resulting transcripts.

Each clip is padded with one chunk of trailing silence (so the register tail
is always processed), streamed via a file-replay session, and its events are
collected over a line-stream sink. Reports carry per-clip WER/word-accuracy
and timing means plus duration-weighted dataset aggregates.
"""

from __future__ import annotations

import csv
import io
import json
import socket
import tempfile
import threading
import time
import wave
from dataclasses import dataclass
from pathlib import Path

import httpx
import numpy as np

from ..ingest import load_replay_audio
from ..register import _to_fraction
from ..transcriber import float_to_pcm16
from .scoring import weighted_mean, weighted_stats, wer, word_accuracy

TIMING_KEYS = ("pre_vad", "vad", "trx", "suggestion", "total")


class EvalError(RuntimeError):
    pass


@dataclass
class ClipManifestEntry:
    clip_id: str
    audio_path: str
    reference_text: str
    duration_seconds: float | None = None

    def __post_init__(self):
        if not self.reference_text or not self.reference_text.strip():
            raise ValueError(f"clip {self.clip_id!r} has an empty reference text")


def load_manifest(path: str | Path) -> list[ClipManifestEntry]:
    """Read a JSON-Lines manifest, one clip entry per line."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            row = json.loads(line)
            entries.append(ClipManifestEntry(
                clip_id=str(row["clip_id"]),
                audio_path=str(row["audio_path"]),
                reference_text=str(row["reference_text"]),
                duration_seconds=row.get("duration_seconds"),
            ))
        except (KeyError, ValueError, TypeError) as exc:
            raise EvalError(f"{path}:{lineno}: invalid manifest entry: {exc}") from exc
    if not entries:
        raise EvalError(f"{path}: manifest is empty")
    return entries


def pad_trailing_silence(samples: np.ndarray, chunk_seconds, sample_rate: int) -> np.ndarray:
    """Append exactly one chunk worth of zero samples."""
    pad = _to_fraction(chunk_seconds) * sample_rate
    if pad.denominator != 1:
        raise ValueError(f"chunk_seconds * sample_rate must be integral, got {pad}")
    return np.concatenate([samples, np.zeros(int(pad), dtype=np.float32)])


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(float_to_pcm16(samples))


def random_words(n_words: int, rng, word_len: int = 7) -> list[str]:
    """Pairwise-distant random letter words.

    Consecutive natural-language words are far apart in edit distance; the
    overlap search relies on that, so fixture vocabularies must share the
    property (near-identical words like "word008"/"word009" make shifted
    substitution chains cheaper than dropping the stale head).
    """
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    words: list[str] = []
    seen = set()
    while len(words) < n_words:
        word = "".join(rng.choice(letters, size=word_len))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def synthesize_clip(path: str | Path, duration_seconds: float, n_words: int,
                    sample_rate: int = 16000, seed: int = 0,
                    amplitude: float = 0.25) -> ClipManifestEntry:
    """Write a fully-voiced noise clip with a random-word reference text.

    The scripted backend spreads the reference words uniformly over the clip,
    so the assembled transcript must reproduce the reference exactly.
    """
    rng = np.random.default_rng(seed)
    samples = rng.uniform(-amplitude, amplitude,
                          size=int(round(duration_seconds * sample_rate))).astype(np.float32)
    write_wav(path, samples, sample_rate)
    reference = " ".join(random_words(n_words, rng))
    return ClipManifestEntry(
        clip_id=Path(path).stem,
        audio_path=str(path),
        reference_text=reference,
        duration_seconds=duration_seconds,
    )


class LineStreamCollector:
    """TCP listener that gathers newline-delimited JSON events from a sink."""

    def __init__(self):
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind(("127.0.0.1", 0))
        self._server.listen(4)
        self._server.settimeout(0.2)
        self.target = "127.0.0.1:%d" % self._server.getsockname()[1]
        self.events: list[dict] = []
        self._cond = threading.Condition()
        self._closing = False
        self._thread = threading.Thread(target=self._serve, daemon=True,
                                        name="eval-collector")
        self._thread.start()

    def _serve(self):
        while not self._closing:
            try:
                conn, _ = self._server.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with conn:
                conn.settimeout(0.2)
                buffer = b""
                while not self._closing:
                    try:
                        data = conn.recv(65536)
                    except socket.timeout:
                        continue
                    except OSError:
                        break
                    if not data:
                        break
                    buffer += data
                    while b"\n" in buffer:
                        line, buffer = buffer.split(b"\n", 1)
                        if not line.strip():
                            continue
                        event = json.loads(line)
                        with self._cond:
                            self.events.append(event)
                            self._cond.notify_all()

    def wait_for_seq(self, seq: int, timeout: float) -> bool:
        """Block until an event with chunk seq >= ``seq`` arrives."""
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                if any(e.get("seq", -1) >= seq for e in self.events):
                    return True
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._cond.wait(remaining)

    def close(self):
        self._closing = True
        try:
            self._server.close()
        except OSError:
            pass
        self._thread.join(timeout=2.0)


def _timeline_pairs(reference: str, duration_seconds: float) -> list[list]:
    words = reference.split()
    step = duration_seconds / len(words)
    return [[step * (i + 0.5), w] for i, w in enumerate(words)]


def _timing_means(events: list[dict]) -> dict:
    scored = [e for e in events if e.get("status") in ("text", "filtered")]
    if not scored:
        return {}
    out = {}
    for key in TIMING_KEYS:
        out[f"{key}_mean"] = sum(e["timing"][key] for e in scored) / len(scored)
    return out


def _evaluate_clip(client: httpx.Client, entry: ClipManifestEntry, *,
                   chunk_seconds, chunk_count: int, sample_rate: int,
                   backend: str, backend_command, backend_options: dict,
                   language, vad: dict | None, poll_interval: float,
                   clip_timeout: float, pacing: str) -> dict:
    audio = load_replay_audio(entry.audio_path, sample_rate)
    actual_duration = audio.size / sample_rate
    duration = entry.duration_seconds or actual_duration
    padded = pad_trailing_silence(audio, chunk_seconds, sample_rate)
    chunk_samples = int(_to_fraction(chunk_seconds) * sample_rate)
    expected_last_seq = padded.size // chunk_samples - 1

    options = dict(backend_options or {})
    if backend == "scripted" and "timeline" not in options:
        options["timeline"] = _timeline_pairs(entry.reference_text, actual_duration)

    collector = LineStreamCollector()
    tmp = tempfile.NamedTemporaryFile(suffix=".wav", delete=False)
    tmp.close()
    session_id = None
    started = False
    try:
        write_wav(tmp.name, padded, sample_rate)
        warmup_body = {
            "input": {"mode": "file_replay", "sample_rate": sample_rate,
                      "replay_path": tmp.name, "replay_pacing": pacing},
            "register": {"chunk_seconds": chunk_seconds, "chunk_count": chunk_count},
            "vad": vad or {},
            "transcriber": {"backend": backend, "backend_command": backend_command or [],
                            "backend_options": options, "language": language},
            "output": {"kind": "line_stream", "target": collector.target},
            "poll_interval": poll_interval,
        }
        resp = client.post("/warmup", json=warmup_body)
        if resp.status_code != 200:
            raise EvalError(f"warmup failed ({resp.status_code}): {resp.text}")
        session_id = resp.json()["session_id"]
        resp = client.post("/start", json={"session_id": session_id})
        if resp.status_code != 200:
            raise EvalError(f"start failed ({resp.status_code}): {resp.text}")
        started = True
        if not collector.wait_for_seq(expected_last_seq, clip_timeout):
            raise EvalError(
                f"timed out after {clip_timeout}s waiting for chunk {expected_last_seq}"
            )
        resp = client.post("/stop", json={"session_id": session_id})
        if resp.status_code != 200:
            raise EvalError(f"stop failed ({resp.status_code}): {resp.text}")
        started = False

        events = list(collector.events)
        transcript = " ".join(
            e["suggestion"] for e in events
            if e.get("status") in ("text", "filtered") and e.get("suggestion")
        )
        clip_wer = wer(entry.reference_text, transcript)
        record = {
            "clip_id": entry.clip_id,
            "duration_seconds": float(duration),
            "n_chunks": expected_last_seq + 1,
            "events": len(events),
            "transcript": transcript,
            "wer": clip_wer,
            "word_accuracy": word_accuracy(clip_wer),
            "timing": _timing_means(events),
        }
        return record
    finally:
        if started and session_id is not None:
            try:
                client.post("/stop", json={"session_id": session_id})
            except httpx.HTTPError:
                pass
        collector.close()
        Path(tmp.name).unlink(missing_ok=True)


def run_eval(manifest, *, chunk_seconds, chunk_count: int, sample_rate: int = 16000,
             backend: str = "scripted", backend_command=None, backend_options=None,
             language=None, vad: dict | None = None, endpoint: str | None = None,
             poll_interval: float = 0.02, clip_timeout: float = 120.0,
             pacing: str = "unpaced") -> dict:
    """Evaluate every manifest clip against a service instance.

    ``manifest`` is a JSONL path or a list of entries. When ``endpoint`` is
    None an in-process service is spawned for the duration of the run.
    Per-clip failures are recorded and the run continues.
    """
    if isinstance(manifest, (str, Path)):
        entries = load_manifest(manifest)
    else:
        entries = list(manifest)

    server = None
    base_url = endpoint
    try:
        if base_url is None:
            from ..service import BackgroundServer

            server = BackgroundServer()
            base_url = server.start()

        per_clip = []
        with httpx.Client(base_url=base_url, timeout=30.0) as client:
            for entry in entries:
                try:
                    per_clip.append(_evaluate_clip(
                        client, entry,
                        chunk_seconds=chunk_seconds, chunk_count=chunk_count,
                        sample_rate=sample_rate, backend=backend,
                        backend_command=backend_command,
                        backend_options=backend_options or {},
                        language=language, vad=vad, poll_interval=poll_interval,
                        clip_timeout=clip_timeout, pacing=pacing,
                    ))
                except (EvalError, ValueError, OSError, httpx.HTTPError) as exc:
                    per_clip.append({"clip_id": entry.clip_id, "error": str(exc)})
    finally:
        if server is not None:
            server.stop()

    return {
        "config": {"chunk_seconds": float(chunk_seconds), "chunk_count": chunk_count,
                   "sample_rate": sample_rate, "backend": backend},
        "per_clip": per_clip,
        "dataset": aggregate_dataset(per_clip),
    }


def aggregate_dataset(per_clip: list[dict]) -> dict:
    """Duration-weighted dataset aggregates over the scorable clips."""
    scored = [c for c in per_clip if "error" not in c]
    dataset: dict = {"clips": len(per_clip), "scored_clips": len(scored),
                     "failed_clips": len(per_clip) - len(scored)}
    if not scored:
        return dataset
    durations = [c["duration_seconds"] for c in scored]
    dataset["weighted_wer"] = weighted_mean([c["wer"] for c in scored], durations)
    dataset["weighted_word_accuracy"] = weighted_mean(
        [c["word_accuracy"] for c in scored], durations)
    timing: dict = {}
    for key in TIMING_KEYS:
        with_timing = [c for c in scored if c["timing"].get(f"{key}_mean") is not None]
        if with_timing:
            mean, se = weighted_stats(
                [c["timing"][f"{key}_mean"] for c in with_timing],
                [c["duration_seconds"] for c in with_timing])
            timing[f"{key}_mean"] = mean
            timing[f"{key}_se"] = se
    dataset["timing"] = timing
    return dataset


def sweep(manifest, chunk_seconds_values, chunk_count_values, **run_kwargs) -> dict:
    """One evaluation report per (chunk_seconds, chunk_count) grid cell."""
    endpoint = run_kwargs.pop("endpoint", None)
    server = None
    try:
        if endpoint is None:
            from ..service import BackgroundServer

            server = BackgroundServer()
            endpoint = server.start()
        cells = []
        for chunk_seconds in chunk_seconds_values:
            for chunk_count in chunk_count_values:
                cell = {"chunk_seconds": float(chunk_seconds), "chunk_count": int(chunk_count)}
                try:
                    cell["report"] = run_eval(
                        manifest, chunk_seconds=chunk_seconds, chunk_count=chunk_count,
                        endpoint=endpoint, **run_kwargs)
                except (EvalError, ValueError, OSError) as exc:
                    cell["error"] = str(exc)
                cells.append(cell)
    finally:
        if server is not None:
            server.stop()
    return {"cells": cells}


def sweep_to_csv(sweep_result: dict) -> str:
    """Long-form CSV matrix: one row per grid cell with WER and latency."""
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["chunk_seconds", "chunk_count", "weighted_wer",
                     "weighted_word_accuracy", "pre_vad_mean", "vad_mean",
                     "trx_mean", "suggestion_mean", "total_mean", "error"])
    for cell in sweep_result["cells"]:
        if "error" in cell:
            writer.writerow([cell["chunk_seconds"], cell["chunk_count"],
                             "", "", "", "", "", "", "", cell["error"]])
            continue
        dataset = cell["report"]["dataset"]
        timing = dataset.get("timing", {})
        writer.writerow([
            cell["chunk_seconds"], cell["chunk_count"],
            dataset.get("weighted_wer", ""), dataset.get("weighted_word_accuracy", ""),
            timing.get("pre_vad_mean", ""), timing.get("vad_mean", ""),
            timing.get("trx_mean", ""), timing.get("suggestion_mean", ""),
            timing.get("total_mean", ""), "",
        ])
    return out.getvalue()

"""HTTP signaling surface: stream negotiation, session lifecycle, event sinks.

Endpoints (JSON bodies):
  POST /warmup   prepare a session: bind/validate input, spawn+handshake the
                 transcriber backend, allocate the register
  POST /start    begin ingestion and the transcription loop
  POST /stop     halt the session, returning final stats
  POST /config   live-update VAD / backend options (register geometry is
                 frozen after warmup)
  GET  /sessions/{id}   session descriptor and live counters
  GET  /health

Transcript events are pushed to the configured output sink, either one HTTP
POST per event or newline-delimited JSON over a TCP connection. Event JSON:
``{"session":s,"seq":N,"status":"text|silence|filtered","suggestion":"...",
"timing":{"pre_vad":x,"vad":x,"trx":x,"suggestion":x,"total":x}}``
"""

from __future__ import annotations

import json
import os
import shlex
import socket
import threading
import time
import uuid
from collections import deque
from contextlib import asynccontextmanager
from dataclasses import dataclass, field

import httpx
import numpy as np
import uvicorn
from fastapi import FastAPI, HTTPException, Request

from . import _kernels
from .ingest import IngestConfig, IngestError, IngestHandle, load_replay_audio, start_ingest
from .orchestrator import HallucinationConfig, TranscriptEvent, TranscriptionSession
from .register import RegisterConfig, RegisterConfigError, ShiftingRegister
from .transcriber import (
    BackendStartError,
    ExternalTranscriber,
    ScriptedTimeline,
    ScriptedTranscriber,
)
from .vad import EnergyVad, VadConfig

ALLOWED_SAMPLE_RATES = (8000, 16000, 48000)
SINK_BUFFER_CAP = 1000


class ConfigurationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# event serialization
# ---------------------------------------------------------------------------

def serialize_event(session_id: str, event: TranscriptEvent) -> str:
    payload = {
        "session": session_id,
        "seq": event.chunk_seq,
        "status": event.status,
        "suggestion": event.suggestion,
        "timing": {
            "pre_vad": event.timing.pre_vad_seconds,
            "vad": event.timing.vad_seconds,
            "trx": event.timing.trx_seconds,
            "suggestion": event.timing.suggestion_seconds,
            "total": event.timing.total_seconds,
        },
    }
    if event.status == "error":
        payload["error"] = event.error
    return json.dumps(payload, separators=(",", ":"))


def deserialize_event(line: str) -> dict:
    return json.loads(line)


# ---------------------------------------------------------------------------
# sinks
# ---------------------------------------------------------------------------

class EventSink:
    """Ordered, bounded event delivery to an external destination.

    A dedicated thread drains the buffer so a slow sink never stalls the
    transcription loop; when the destination is unreachable events pile up
    to ``SINK_BUFFER_CAP`` and then the oldest are dropped (counted).
    """

    def __init__(self, kind: str, target: str | None, session_id: str):
        self.kind = kind
        self.target = target
        self.session_id = session_id
        self.dropped_events = 0
        self.delivered_events = 0
        self._buffer: deque[str] = deque()
        self._cond = threading.Condition()
        self._closing = False
        self._thread: threading.Thread | None = None
        self._sock: socket.socket | None = None

    def submit(self, event: TranscriptEvent) -> None:
        if self.kind == "none":
            return
        line = serialize_event(self.session_id, event)
        with self._cond:
            if len(self._buffer) >= SINK_BUFFER_CAP:
                self._buffer.popleft()
                self.dropped_events += 1
            self._buffer.append(line)
            self._cond.notify()

    def start(self) -> None:
        if self.kind == "none" or self._thread is not None:
            return
        self._thread = threading.Thread(target=self._deliver_loop, daemon=True,
                                        name=f"sink-{self.session_id[:8]}")
        self._thread.start()

    def _deliver_loop(self) -> None:
        while True:
            with self._cond:
                while not self._buffer and not self._closing:
                    self._cond.wait(timeout=0.2)
                if not self._buffer and self._closing:
                    return
                line = self._buffer[0]
            if self._deliver(line):
                with self._cond:
                    if self._buffer and self._buffer[0] is line:
                        self._buffer.popleft()
                    self.delivered_events += 1
            else:
                if self._closing:
                    return
                time.sleep(0.2)  # unreachable sink: retry, buffer keeps filling

    def _deliver(self, line: str) -> bool:
        try:
            if self.kind == "line_stream":
                if self._sock is None:
                    host, _, port = self.target.rpartition(":")
                    self._sock = socket.create_connection((host, int(port)), timeout=2.0)
                self._sock.sendall(line.encode("utf-8") + b"\n")
                return True
            if self.kind == "http_post":
                httpx.post(self.target, content=line.encode("utf-8"),
                           headers={"content-type": "application/json"}, timeout=5.0)
                return True
        except (OSError, httpx.HTTPError):
            if self._sock is not None:
                try:
                    self._sock.close()
                except OSError:
                    pass
                self._sock = None
            return False
        return True

    def close(self, flush_timeout: float = 3.0) -> None:
        if self._thread is None:
            return
        deadline = time.monotonic() + flush_timeout
        while time.monotonic() < deadline:
            with self._cond:
                if not self._buffer:
                    break
            time.sleep(0.01)
        with self._cond:
            self._closing = True
            self._cond.notify_all()
        self._thread.join(timeout=2.0)
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None


# ---------------------------------------------------------------------------
# warmup parsing
# ---------------------------------------------------------------------------

@dataclass
class WarmupConfig:
    ingest: IngestConfig
    register: RegisterConfig
    vad_backend: str
    vad: VadConfig
    backend: str
    backend_command: list[str]
    backend_options: dict
    language: str | None
    vad_enabled: bool
    backend_timeout: float
    hallucination: HallucinationConfig
    output_kind: str
    output_target: str | None
    poll_interval: float


def _section(body: dict, name: str, required: bool = True) -> dict:
    value = body.get(name, {} if not required else None)
    if value is None:
        raise ConfigurationError(f"missing {name!r} section")
    if not isinstance(value, dict):
        raise ConfigurationError(f"{name!r} section must be an object")
    return value


def parse_warmup(body: dict) -> WarmupConfig:
    if not isinstance(body, dict):
        raise ConfigurationError("request body must be a JSON object")
    inp = _section(body, "input")
    reg = _section(body, "register")
    vad = _section(body, "vad", required=False)
    trx = _section(body, "transcriber")
    out = _section(body, "output", required=False)

    sample_rate = inp.get("sample_rate")
    if sample_rate not in ALLOWED_SAMPLE_RATES:
        raise ConfigurationError(
            f"sample_rate must be one of {ALLOWED_SAMPLE_RATES}, got {sample_rate!r}"
        )
    if inp.get("channels", 1) != 1:
        raise ConfigurationError("only mono input is supported")
    codec = str(inp.get("codec", "L16")).upper()
    if codec not in ("L16", "PCM16"):
        raise ConfigurationError(f"input codec is fixed to L16, got {codec!r}")
    mode = inp.get("mode")
    if mode not in ("rtp", "file_replay"):
        raise ConfigurationError(f"input.mode must be 'rtp' or 'file_replay', got {mode!r}")
    rtp_port = inp.get("rtp_port", 0)
    if not isinstance(rtp_port, int) or isinstance(rtp_port, bool) \
            or not 0 <= rtp_port <= 65535:
        raise ConfigurationError(f"rtp_port must be a UDP port number, got {rtp_port!r}")
    try:
        ingest_config = IngestConfig(
            mode=mode,
            sample_rate=sample_rate,
            rtp_port=rtp_port,
            replay_path=inp.get("replay_path"),
            replay_pacing=inp.get("replay_pacing", "unpaced"),
        )
    except IngestError as exc:
        raise ConfigurationError(str(exc)) from exc

    chunk_count = reg.get("chunk_count")
    if not isinstance(chunk_count, int) or isinstance(chunk_count, bool):
        raise ConfigurationError(f"chunk_count must be an integer, got {chunk_count!r}")
    try:
        register_config = RegisterConfig(
            chunk_count=chunk_count,
            chunk_seconds=reg.get("chunk_seconds", 0),
            sample_rate=sample_rate,
        )
    except (RegisterConfigError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid register geometry: {exc}") from exc

    vad_backend = vad.get("backend", "energy")
    if vad_backend != "energy":
        raise ConfigurationError(f"unknown vad backend {vad_backend!r}")
    try:
        vad_config = VadConfig(
            frame_ms=int(vad.get("frame_ms", 30)),
            energy_threshold=float(vad.get("energy_threshold", 0.01)),
            min_voiced_frames=int(vad.get("min_voiced_frames", 3)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid vad config: {exc}") from exc

    backend = trx.get("backend")
    if backend not in ("scripted", "external"):
        raise ConfigurationError(
            f"transcriber.backend must be 'scripted' or 'external', got {backend!r}"
        )
    command = trx.get("backend_command", [])
    if isinstance(command, str):
        command = shlex.split(command)
    if backend == "external" and not command:
        raise ConfigurationError("external backend requires backend_command")
    options = trx.get("backend_options", {})
    if not isinstance(options, dict):
        raise ConfigurationError("backend_options must be an object")
    hall = trx.get("hallucination", {})
    hallucination = HallucinationConfig(
        max_ngram=int(hall.get("max_ngram", 4)),
        repeat_threshold=int(hall.get("repeat_threshold", 5)),
    )

    output_kind = out.get("kind", "none")
    if output_kind not in ("none", "line_stream", "http_post"):
        raise ConfigurationError(f"unknown output kind {output_kind!r}")
    output_target = out.get("target")
    if output_kind != "none" and not output_target:
        raise ConfigurationError(f"output kind {output_kind!r} requires a target")

    poll_interval = float(body.get("poll_interval", 0.1))
    if poll_interval <= 0:
        raise ConfigurationError("poll_interval must be positive")

    return WarmupConfig(
        ingest=ingest_config,
        register=register_config,
        vad_backend=vad_backend,
        vad=vad_config,
        backend=backend,
        backend_command=list(command),
        backend_options=dict(options),
        language=trx.get("language"),
        vad_enabled=bool(trx.get("vad_enabled", True)),
        backend_timeout=float(trx.get("timeout", 30.0)),
        hallucination=hallucination,
        output_kind=output_kind,
        output_target=output_target,
        poll_interval=poll_interval,
    )


# ---------------------------------------------------------------------------
# session runtime
# ---------------------------------------------------------------------------

def _build_transcriber(config: WarmupConfig):
    if config.backend == "scripted":
        timeline = ScriptedTimeline.from_pairs(config.backend_options.get("timeline", []))
        delay = float(config.backend_options.get("delay_per_audio_second", 0.0))
        return ScriptedTranscriber(timeline, delay_per_audio_second=delay)
    return ExternalTranscriber(
        config.backend_command,
        sample_rate=config.register.sample_rate,
        language=config.language,
        vad_enabled=config.vad_enabled,
        backend_options=config.backend_options,
        timeout=config.backend_timeout,
    )


@dataclass
class SessionRuntime:
    session_id: str
    config: WarmupConfig
    register: ShiftingRegister
    session: TranscriptionSession
    transcriber: object
    sink: EventSink
    state: str = "warmed"  # warmed -> running -> stopped; errored terminal
    rtp_socket: socket.socket | None = None
    replay_audio: np.ndarray | None = None
    ingest_handle: IngestHandle | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def descriptor(self) -> dict:
        return {"session_id": self.session_id, "state": self.state}

    def stats(self) -> dict:
        by_status: dict[str, int] = {}
        for event in self.session.events:
            by_status[event.status] = by_status.get(event.status, 0) + 1
        ingest_stats = self.ingest_handle.stats if self.ingest_handle else None
        return {
            "events": len(self.session.events),
            "by_status": by_status,
            "chunks_appended": self.register.appended_total,
            "timing": self.session.timing_summary(),
            "sink_dropped": self.sink.dropped_events,
            "sink_delivered": self.sink.delivered_events,
            "transcript": self.session.assemble_transcript(),
            "ingest": None if ingest_stats is None else vars(ingest_stats),
        }

    def release(self) -> None:
        if self.ingest_handle is not None:
            self.ingest_handle.stop()
        if self.session.running:
            self.session.stop()
        self.transcriber.close()
        self.sink.close()
        if self.rtp_socket is not None:
            try:
                self.rtp_socket.close()
            except OSError:
                pass
            self.rtp_socket = None


class SessionManager:
    def __init__(self):
        self._sessions: dict[str, SessionRuntime] = {}
        self._lock = threading.Lock()

    def warmup(self, body: dict) -> SessionRuntime:
        config = parse_warmup(body)  # pure; raises ConfigurationError -> 400

        transcriber = _build_transcriber(config)  # BackendStartError -> 502
        rtp_socket = None
        replay_audio = None
        try:
            if config.ingest.mode == "rtp":
                rtp_socket = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                try:
                    rtp_socket.bind(("0.0.0.0", config.ingest.rtp_port))
                except OSError as exc:
                    raise PortInUseError(
                        f"cannot bind UDP port {config.ingest.rtp_port}: {exc}"
                    ) from exc
            else:
                try:
                    replay_audio = load_replay_audio(
                        config.ingest.replay_path, config.ingest.sample_rate)
                except (OSError, IngestError) as exc:
                    raise ConfigurationError(f"cannot open replay file: {exc}") from exc
        except Exception:
            # warmup must be side-effect free on failure
            transcriber.close()
            if rtp_socket is not None:
                rtp_socket.close()
            raise

        session_id = uuid.uuid4().hex[:12]
        register = ShiftingRegister(config.register)
        sink = EventSink(config.output_kind, config.output_target, session_id)
        session = TranscriptionSession(
            register,
            EnergyVad(config.register.sample_rate, config.vad),
            transcriber,
            hallucination=config.hallucination,
            poll_interval=config.poll_interval,
            on_event=sink.submit,
        )
        runtime = SessionRuntime(
            session_id=session_id, config=config, register=register,
            session=session, transcriber=transcriber, sink=sink,
            rtp_socket=rtp_socket, replay_audio=replay_audio,
        )
        with self._lock:
            self._sessions[session_id] = runtime
        return runtime

    def get(self, session_id: str) -> SessionRuntime:
        with self._lock:
            runtime = self._sessions.get(session_id)
        if runtime is None:
            raise UnknownSessionError(f"unknown session {session_id!r}")
        return runtime

    def start(self, session_id: str) -> SessionRuntime:
        runtime = self.get(session_id)
        with runtime.lock:
            if runtime.state != "warmed":
                raise InvalidTransitionError(
                    f"cannot start session in state {runtime.state!r}"
                )
            try:
                runtime.sink.start()
                runtime.session.start()
                gate = None
                if (runtime.config.ingest.mode == "file_replay"
                        and runtime.config.ingest.replay_pacing == "unpaced"):
                    gate = runtime.session.consumer_gate()
                runtime.ingest_handle = start_ingest(
                    runtime.config.ingest, runtime.register,
                    sock=runtime.rtp_socket, gate=gate,
                )
                runtime.rtp_socket = None  # owned by the ingest handle now
            except Exception:
                runtime.state = "errored"
                runtime.release()
                raise
            runtime.state = "running"
        return runtime

    def stop(self, session_id: str) -> tuple[SessionRuntime, dict]:
        runtime = self.get(session_id)
        with runtime.lock:
            if runtime.state != "running":
                raise InvalidTransitionError(
                    f"cannot stop session in state {runtime.state!r}"
                )
            if runtime.ingest_handle is not None:
                runtime.ingest_handle.stop()
            runtime.session.stop()
            stats = runtime.stats()
            runtime.transcriber.close()
            runtime.sink.close()
            runtime.state = "stopped"
        return runtime, stats

    def reconfigure(self, session_id: str, body: dict) -> SessionRuntime:
        runtime = self.get(session_id)
        with runtime.lock:
            if "register" in body or "chunk_seconds" in body or "chunk_count" in body:
                raise InvalidTransitionError("register geometry is frozen after warmup")
            vad_update = body.get("vad")
            if vad_update is not None:
                current = runtime.session.vad.config
                new_config = VadConfig(
                    frame_ms=int(vad_update.get("frame_ms", current.frame_ms)),
                    energy_threshold=float(
                        vad_update.get("energy_threshold", current.energy_threshold)),
                    min_voiced_frames=int(
                        vad_update.get("min_voiced_frames", current.min_voiced_frames)),
                )
                runtime.session.vad = EnergyVad(
                    runtime.config.register.sample_rate, new_config)
            trx_update = body.get("transcriber")
            if trx_update is not None:
                options = trx_update.get("backend_options")
                if options:
                    runtime.transcriber.update_options(options)
                hall = trx_update.get("hallucination")
                if hall:
                    current_h = runtime.session.hallucination
                    runtime.session.hallucination = HallucinationConfig(
                        max_ngram=int(hall.get("max_ngram", current_h.max_ngram)),
                        repeat_threshold=int(
                            hall.get("repeat_threshold", current_h.repeat_threshold)),
                    )
        return runtime

    def shutdown(self) -> None:
        with self._lock:
            sessions = list(self._sessions.values())
            self._sessions.clear()
        for runtime in sessions:
            runtime.release()


class UnknownSessionError(KeyError):
    pass


class InvalidTransitionError(RuntimeError):
    pass


class PortInUseError(OSError):
    pass


# ---------------------------------------------------------------------------
# HTTP app
# ---------------------------------------------------------------------------

def create_app() -> FastAPI:
    _kernels.warmup()  # JIT cost belongs to server startup, not the first chunk
    manager = SessionManager()

    @asynccontextmanager
    async def lifespan(_app):
        yield
        manager.shutdown()

    app = FastAPI(title="streamscribe", docs_url=None, redoc_url=None,
                  lifespan=lifespan)
    app.state.manager = manager

    async def _body(request: Request) -> dict:
        try:
            return await request.json()
        except json.JSONDecodeError:
            raise HTTPException(400, "request body must be valid JSON") from None

    @app.post("/warmup")
    async def warmup(request: Request):
        body = await _body(request)
        try:
            runtime = manager.warmup(body)
        except ConfigurationError as exc:
            raise HTTPException(400, str(exc)) from exc
        except PortInUseError as exc:
            raise HTTPException(409, str(exc)) from exc
        except BackendStartError as exc:
            raise HTTPException(502, str(exc)) from exc
        return runtime.descriptor()

    @app.post("/start")
    async def start(request: Request):
        body = await _body(request)
        try:
            runtime = manager.start(str(body.get("session_id", "")))
        except UnknownSessionError as exc:
            raise HTTPException(404, str(exc)) from exc
        except InvalidTransitionError as exc:
            raise HTTPException(409, str(exc)) from exc
        except (IngestError, OSError) as exc:
            raise HTTPException(500, f"failed to start ingestion: {exc}") from exc
        return runtime.descriptor()

    @app.post("/stop")
    async def stop(request: Request):
        body = await _body(request)
        try:
            runtime, stats = manager.stop(str(body.get("session_id", "")))
        except UnknownSessionError as exc:
            raise HTTPException(404, str(exc)) from exc
        except InvalidTransitionError as exc:
            raise HTTPException(409, str(exc)) from exc
        return {**runtime.descriptor(), "stats": stats}

    @app.post("/config")
    async def config(request: Request):
        body = await _body(request)
        try:
            runtime = manager.reconfigure(str(body.get("session_id", "")), body)
        except UnknownSessionError as exc:
            raise HTTPException(404, str(exc)) from exc
        except InvalidTransitionError as exc:
            raise HTTPException(409, str(exc)) from exc
        except (TypeError, ValueError) as exc:
            raise HTTPException(400, str(exc)) from exc
        return runtime.descriptor()

    @app.get("/sessions/{session_id}")
    async def describe(session_id: str):
        try:
            runtime = manager.get(session_id)
        except UnknownSessionError as exc:
            raise HTTPException(404, str(exc)) from exc
        return {**runtime.descriptor(), "stats": runtime.stats()}

    @app.get("/health")
    async def health():
        return {"status": "ok"}

    return app


# ---------------------------------------------------------------------------
# embedded server helpers
# ---------------------------------------------------------------------------

class BackgroundServer:
    """Uvicorn server on an ephemeral port, running in a daemon thread."""

    def __init__(self, app: FastAPI | None = None, host: str = "127.0.0.1", port: int = 0):
        self.app = app or create_app()
        config = uvicorn.Config(self.app, host=host, port=port, log_level="warning")
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self._server.run, daemon=True,
                                        name="streamscribe-http")

    def start(self, timeout: float = 10.0) -> str:
        self._thread.start()
        deadline = time.monotonic() + timeout
        while not self._server.started:
            if time.monotonic() > deadline or not self._thread.is_alive():
                raise RuntimeError("HTTP server failed to start")
            time.sleep(0.01)
        sock = self._server.servers[0].sockets[0]
        host, port = sock.getsockname()[:2]
        return f"http://{host}:{port}"

    def stop(self) -> None:
        self.app.state.manager.shutdown()
        self._server.should_exit = True
        self._thread.join(timeout=10.0)


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Run the transcription service")
    parser.add_argument("--host", default="0.0.0.0")
    parser.add_argument("--port", type=int,
                        default=int(os.environ.get("STREAMSCRIBE_PORT", "8080")))
    args = parser.parse_args(argv)
    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Loopback transcriber process for protocol tests and synthetic latency runs.

Speaks the line-JSON wire protocol on stdin/stdout. Run as
``python -m streamscribe.mock_backend [options]``.

Modes:
  echo      answer every request with a fixed text (--text)
  checksum  answer with "echo <sha1-prefix> <n-samples>" so the client can
            verify the audio payload survived the trip bit-exactly
  reflect   answer with the request's backend_options as sorted JSON, so
            option pass-through is observable

``--delay-per-audio-second S`` sleeps S seconds per second of decoded audio
before answering, simulating a model whose cost is proportional to input
length. A request whose ``backend_options.force_error`` is truthy gets an
error line instead of a result.
"""

from __future__ import annotations

import argparse
import base64
import hashlib
import json
import sys
import time


def _respond(msg: dict) -> None:
    sys.stdout.write(json.dumps(msg, separators=(",", ":")) + "\n")
    sys.stdout.flush()


def serve(args) -> int:
    if args.handshake == "ok":
        _respond({"ready": True, "backend": f"mock-{args.mode}"})
    elif args.handshake == "not-ready":
        _respond({"ready": False, "backend": f"mock-{args.mode}"})
    elif args.handshake == "garbage":
        sys.stdout.write("this is not json\n")
        sys.stdout.flush()
    # handshake == "none": stay silent

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            _respond({"id": -1, "error": "malformed request line"})
            continue
        req_id = req.get("id", -1)
        try:
            audio = base64.b64decode(req.get("audio", ""), validate=True)
        except (ValueError, TypeError):
            _respond({"id": req_id, "error": "audio field is not valid base64"})
            continue
        if (req.get("backend_options") or {}).get("force_error"):
            _respond({"id": req_id, "error": "forced error for testing"})
            continue

        n_samples = len(audio) // 2
        started = time.perf_counter()
        if args.delay_per_audio_second > 0.0 and req.get("sample_rate"):
            time.sleep(args.delay_per_audio_second * n_samples / req["sample_rate"])

        if args.mode == "checksum":
            digest = hashlib.sha1(audio).hexdigest()[:12]
            text = f"echo {digest} {n_samples}"
        elif args.mode == "reflect":
            text = json.dumps(req.get("backend_options") or {}, sort_keys=True)
        else:
            text = args.text
        _respond({
            "id": req_id,
            "text": text,
            "segments": [],
            "model_time": time.perf_counter() - started,
        })
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--mode", choices=["echo", "checksum", "reflect"], default="echo")
    parser.add_argument("--text", default="mock transcription")
    parser.add_argument("--delay-per-audio-second", type=float, default=0.0)
    parser.add_argument("--handshake", choices=["ok", "not-ready", "garbage", "none"],
                        default="ok", help="handshake behavior, for failure-path tests")
    return serve(parser.parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points: ``evalkit run``, ``evalkit sweep``,
``evalkit compare``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import run_eval, sweep, sweep_to_csv
from .stats import compare_reports


def _add_run_args(parser: argparse.ArgumentParser, multi: bool) -> None:
    parser.add_argument("--manifest", required=True, help="JSONL clip manifest")
    if multi:
        parser.add_argument("--chunk-seconds", required=True,
                            help="comma-separated chunk lengths, e.g. 2,4,6")
        parser.add_argument("--chunk-count", required=True,
                            help="comma-separated buffer sizes, e.g. 3,5,15")
    else:
        parser.add_argument("--chunk-seconds", type=float, required=True)
        parser.add_argument("--chunk-count", type=int, required=True)
    parser.add_argument("--sample-rate", type=int, default=16000)
    parser.add_argument("--backend", choices=["scripted", "external"], default="scripted")
    parser.add_argument("--backend-command", default=None,
                        help="command line launching an external backend")
    parser.add_argument("--backend-options", default=None,
                        help="JSON object forwarded to the backend")
    parser.add_argument("--language", default=None)
    parser.add_argument("--endpoint", default=None,
                        help="service base URL; omitted = spawn an in-process service")
    parser.add_argument("--pacing", choices=["unpaced", "realtime"], default="unpaced")
    parser.add_argument("--clip-timeout", type=float, default=120.0)


def _run_kwargs(args) -> dict:
    options = json.loads(args.backend_options) if args.backend_options else {}
    return dict(
        sample_rate=args.sample_rate,
        backend=args.backend,
        backend_command=args.backend_command,
        backend_options=options,
        language=args.language,
        endpoint=args.endpoint,
        pacing=args.pacing,
        clip_timeout=args.clip_timeout,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="evalkit",
                                     description="Transcription evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="evaluate a manifest at one configuration")
    _add_run_args(run_p, multi=False)
    run_p.add_argument("--out", required=True, help="report JSON output path")

    sweep_p = sub.add_parser("sweep", help="evaluate a chunk-length x buffer-size grid")
    _add_run_args(sweep_p, multi=True)
    sweep_p.add_argument("--out", required=True, help="grid JSON output path")
    sweep_p.add_argument("--out-csv", default=None, help="CSV matrix output path")

    cmp_p = sub.add_parser("compare", help="pairwise comparison of two reports")
    cmp_p.add_argument("report_a")
    cmp_p.add_argument("report_b")
    cmp_p.add_argument("--out", default=None, help="comparison JSON output path")

    args = parser.parse_args(argv)

    if args.command == "run":
        report = run_eval(args.manifest, chunk_seconds=args.chunk_seconds,
                          chunk_count=args.chunk_count, **_run_kwargs(args))
        Path(args.out).write_text(json.dumps(report, indent=2))
        dataset = report["dataset"]
        print(f"clips={dataset['clips']} scored={dataset['scored_clips']} "
              f"weighted_wer={dataset.get('weighted_wer', float('nan')):.4f}")
        return 0

    if args.command == "sweep":
        seconds = [float(v) for v in args.chunk_seconds.split(",")]
        counts = [int(v) for v in args.chunk_count.split(",")]
        result = sweep(args.manifest, seconds, counts, **_run_kwargs(args))
        Path(args.out).write_text(json.dumps(result, indent=2))
        csv_text = sweep_to_csv(result)
        if args.out_csv:
            Path(args.out_csv).write_text(csv_text)
        print(csv_text, end="")
        return 0

    if args.command == "compare":
        report_a = json.loads(Path(args.report_a).read_text())
        report_b = json.loads(Path(args.report_b).read_text())
        result = compare_reports(report_a, report_b)
        text = json.dumps(result, indent=2)
        if args.out:
            Path(args.out).write_text(text)
        wilcoxon = result["wilcoxon"]
        print(f"clips={result['clips']} mean_ranks=a:{result['mean_ranks']['a']:.3f} "
              f"b:{result['mean_ranks']['b']:.3f} "
              f"p_two_sided={wilcoxon['p_two_sided']} method={wilcoxon['method']}")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())

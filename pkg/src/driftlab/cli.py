"""Command-line entry points: `driftlab serve` and the `bench` harness."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .bench import (
    DetectorConfig,
    EvalConfig,
    detector_from_json,
    generate,
    run_benchmark,
    spec_from_json,
)


def _add_bench_subcommands(sub: argparse._SubParsersAction) -> None:
    gen = sub.add_parser("generate", help="write a synthetic drift stream as CSV")
    gen.add_argument("--spec", required=True, help="SyntheticSpec JSON file")
    gen.add_argument("--out", required=True, help="output CSV path")
    gen.add_argument(
        "--truth-out",
        default=None,
        help="where to write the ground-truth drift ticks (default <out>.truth.json)",
    )

    run = sub.add_parser("run", help="run the detection benchmark")
    run.add_argument("--spec", required=True, help="SyntheticSpec JSON file")
    run.add_argument("--detector", default=None, help="DetectorConfig JSON file")
    run.add_argument("--runs", type=int, default=10)
    run.add_argument("--w", type=int, default=None, help="delay window (default: detector window)")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", required=True, help="output report JSON path")


def _run_bench(args: argparse.Namespace) -> int:
    if args.bench_command == "generate":
        spec = spec_from_json(Path(args.spec).read_text(encoding="utf-8"))
        dataset, truth = generate(spec)
        Path(args.out).write_text(dataset.to_csv(), encoding="utf-8")
        truth_path = args.truth_out or f"{args.out}.truth.json"
        Path(truth_path).write_text(json.dumps({"drift_ticks": truth}), encoding="utf-8")
        print(f"wrote {dataset.n} rows to {args.out}; truth ticks to {truth_path}")
        return 0
    if args.bench_command == "run":
        spec = spec_from_json(Path(args.spec).read_text(encoding="utf-8"))
        detector = (
            detector_from_json(Path(args.detector).read_text(encoding="utf-8"))
            if args.detector
            else DetectorConfig()
        )
        w = args.w if args.w is not None else detector.window
        report = run_benchmark(
            spec, detector, EvalConfig(w=w), runs=args.runs, workers=args.workers
        )
        body = report.to_dict()
        Path(args.out).write_text(json.dumps(body, indent=2), encoding="utf-8")
        print(
            f"detected {report.detected:.1f}  late {report.late:.1f}  "
            f"missed {report.missed:.1f}  false {report.false_alarms:.1f} "
            f"(over {report.runs_averaged} runs)"
        )
        return 0
    raise SystemExit(2)


def bench_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="bench", description="synthetic drift-detection benchmark"
    )
    sub = parser.add_subparsers(dest="bench_command", required=True)
    _add_bench_subcommands(sub)
    args = parser.parse_args(argv)
    return _run_bench(args)


def _serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    port = args.port or int(os.environ.get("DRIFTLAB_PORT", "8000"))
    data_dir = args.data_dir or os.environ.get("DRIFTLAB_DATA_DIR")
    app = create_app(data_dir=data_dir)
    uvicorn.run(app, host=args.host, port=port)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="driftlab")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the analytics service")
    serve.add_argument("--port", type=int, default=None)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--data-dir", default=None)

    bench = sub.add_parser("bench", help="synthetic drift-detection benchmark")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)
    _add_bench_subcommands(bench_sub)

    args = parser.parse_args(argv)
    if args.command == "serve":
        return _serve(args)
    return _run_bench(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: prepare / train / fuse / verify / eval / score.

Exit codes: 0 success, 1 usage error, 2 data error, 3 codec unavailable.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import training, zoo
from .data import DirectoryPairs, ManifestPairs, SyntheticPairs
from .harness import (
    ExternalCodec,
    RunConfig,
    emit_report,
    load_manifest,
    prepare_dataset,
    run_benchmark,
)
from .metrics import ScoreInputs, challenge_score
from .resample import CodecUnavailableError, DegradationSpec
from .reparam import lower_branch, verify_equivalence
from .weights import WeightFileError, load_weights, save_weights

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CODEC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _qp_list(text: str) -> tuple[int, ...]:
    if not text or text.lower() == "none":
        return ()
    return tuple(int(q) for q in text.split(","))


def build_parser() -> _Parser:
    parser = _Parser(prog="rtsr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="degrade HR images into LR inputs plus a manifest")
    p.add_argument("--hr", required=True, help="directory of HR PNG/PPM images")
    p.add_argument("--out", required=True, help="output directory for LR files and manifest.json")
    p.add_argument("--qp", default="31,39,47,55,63", type=_qp_list, help="comma-separated QP list")
    p.add_argument("--scale", type=int, default=4)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--codec-cmd", default=None, help="external encoder command template")
    g.add_argument("--no-codec", action="store_true", help="internal resampler only (uncompressed LR)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a zoo model with a JSON stage plan")
    p.add_argument("--spec", required=True, help="zoo model name")
    p.add_argument("--plan", required=True, help="stage-plan JSON file")
    p.add_argument("--data", required=True, help="'synthetic', an image directory, or a manifest dir")
    p.add_argument("--out", required=True, help="output weight file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", default=None, help="optional JSONL training-log path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", help="lower a trained model to its deploy form")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("verify", help="certify train/deploy equivalence of a weight file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="run the benchmark over a prepared manifest")
    p.add_argument("--weights", required=True, help="weight file or 'lanczos'")
    p.add_argument("--manifest", required=True)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--report", default=None, help="report output path (stdout if omitted)")
    p.add_argument("--format", choices=("csv", "json", "table"), default="table")
    p.add_argument("--qp", type=_qp_list, default=None, help="restrict to these QP levels")
    p.add_argument("--baseline-psnr-y", default=None, help="'qp31,qp63' baseline PSNR-Y values")
    p.add_argument("--with-baseline", action="store_true", help="also run the Lanczos baseline")
    p.add_argument("--border", type=int, default=0, help="replicate-pad context at inference")
    p.add_argument("--threads", type=int, default=1, help="BLAS thread cap during timing")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="challenge score from (delta, runtime)")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--runtime-ms", type=float, required=True)
    p.add_argument("--c", type=float, default=0.1)
    p.set_defaults(func=cmd_score)
    return parser


def cmd_prepare(args) -> int:
    qps = args.qp if args.qp else (None,)
    specs = [DegradationSpec(scale_s=args.scale, qp=qp) for qp in qps]
    codec = ExternalCodec(template=args.codec_cmd) if args.codec_cmd else None
    manifest = prepare_dataset(
        args.hr, args.out, specs, use_external_codec=not args.no_codec, codec=codec
    )
    print(f"wrote {len(manifest)} LR files and {Path(args.out) / 'manifest.json'}")
    return EXIT_OK


def _data_source(arg: str):
    if arg == "synthetic":
        return SyntheticPairs()
    path = Path(arg)
    if path.is_file() and path.suffix == ".json":
        return ManifestPairs(load_manifest(path))
    if (path / "manifest.json").exists():
        return ManifestPairs(load_manifest(path / "manifest.json"))
    return DirectoryPairs(path)


def cmd_train(args) -> int:
    spec = zoo.get_spec(args.spec)
    plan = training.plan_from_json(Path(args.plan).read_text(encoding="utf-8"))
    source = _data_source(args.data)
    graph = zoo.build(spec, mode="train", seed=args.seed)
    graph, logs = training.run_stage_plan(graph, plan, source, seed=args.seed)
    if args.log:
        training.write_log(logs, args.log)
    save_weights(graph, args.out)
    print(f"trained {args.spec} ({len(logs)} log records) -> {args.out}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    graph = load_weights(args.input)
    if graph.mode == "deploy":
        print("already in deploy form; copying")
        save_weights(graph, args.out)
        return EXIT_OK
    save_weights(zoo.fuse_model(graph), args.out)
    print(f"fused {graph.spec.name} -> {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    graph = load_weights(args.input)
    if graph.mode != "train":
        print("deploy-form weights: nothing to fuse; structural check only")
        print(f"verify {graph.spec.name}: PASS (deploy form)")
        return EXIT_OK
    failed = False
    for node in graph.nodes:
        if isinstance(node, zoo.RepNode):
            rep = verify_equivalence(
                node.branch, lower_branch(node.branch), trials=args.trials, tol=args.tol
            )
            status = "pass" if rep.passed else "FAIL"
            print(f"  block {node.name} ({node.template}): max abs err {rep.max_abs_err:.3e} {status}")
            failed |= not rep.passed
    whole = zoo.verify_deploy_equivalence(graph, trials=min(args.trials, 20), tol=args.tol)
    status = "pass" if whole.passed else "FAIL"
    print(f"  whole net: max abs err {whole.max_abs_err:.3e} {status}")
    failed |= not whole.passed
    print(f"verify {graph.spec.name}: {'FAIL' if failed else 'PASS'} (tol {args.tol})")
    return EXIT_DATA if failed else EXIT_OK


def cmd_eval(args) -> int:
    baseline = None
    if args.baseline_psnr_y:
        v31, v63 = (float(x) for x in args.baseline_psnr_y.split(","))
        baseline = {31: v31, 63: v63}
    cfg = RunConfig(
        weights=args.weights,
        manifest=args.manifest,
        qps=args.qp,
        warmup=args.warmup,
        runs=args.runs,
        threads=args.threads,
        report_path=args.report,
        report_format=args.format,
        baseline_psnr_y=baseline,
        include_baseline=args.with_baseline,
        pad_border=args.border,
    )
    rows = run_benchmark(cfg)
    if not args.report:
        print(emit_report(rows, args.format), end="")
    else:
        print(f"wrote {args.report}")
    return EXIT_OK


def cmd_score(args) -> int:
    print(f"{challenge_score(ScoreInputs(args.delta, args.runtime_ms, args.c)):.2f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except CodecUnavailableError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CODEC
    except (WeightFileError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

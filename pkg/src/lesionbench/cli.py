"""Command-line entry point: ``lesionbench <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import pandas as pd

from . import __version__
from .errors import LesionBenchError, MissingFile, SchemaViolation
from .harness import (
    EvaluationConfig,
    evaluate_all,
    majority_vote,
    parse_taus,
    read_manifest,
)
from .ranking import (
    HOLM_FAMILIES,
    METHODS,
    CaseTable,
    RankWeights,
    SubsetSummary,
    bootstrap_ranks,
    rank,
)
from .reports import emit_reports, sweep_report, write_json
from .synth import SynthParams, synth_challenge
from .volume_io import BoxRegion, exclude_region, load_label, save_volume

log = logging.getLogger("lesionbench")


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"{path} not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON ({exc})") from exc


def _read_csv(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"{path} not found")
    return pd.read_csv(path, keep_default_na=True)


def _case_table(path, drop_errors: bool) -> CaseTable:
    df = _read_csv(path)
    if "error" in df.columns:
        err = df["error"].notna() & (df["error"].astype(str) != "")
        if err.any() and drop_errors:
            bad = set(df.loc[err, "case_id"].astype(str))
            log.warning("dropping %d case(s) with evaluation errors: %s", len(bad), ", ".join(sorted(bad)))
            df = df[~df["case_id"].astype(str).isin(bad)]
    return CaseTable.from_frame(df)


# ---------------------------------------------------------------------------
# commands


def cmd_evaluate(args) -> int:
    manifest = read_manifest(args.manifest)
    cfg = EvaluationConfig.from_dict(_read_json(args.config)) if args.config else EvaluationConfig()
    cfg = cfg.with_env()
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    result = evaluate_all(manifest, cfg)
    out = Path(args.out)
    emit_reports(out, metrics=result.metrics)
    write_json(out / "overlaps.json", result.overlaps)
    n_err = len(result.metrics) - result.n_ok
    log.info("evaluated %d rows (%d failed) -> %s", len(result.metrics), n_err, out)
    return 0


def cmd_rank(args) -> int:
    weights = RankWeights.parse(args.weights)
    if args.summaries:
        data = SubsetSummary.from_wide(_read_csv(args.summaries))
    else:
        data = _case_table(args.metrics, args.drop_errors)
    kw = {}
    if args.method == "R5":
        kw = {"alpha": args.alpha, "holm_family": args.holm_family, "min_pairs": args.min_pairs}
    table = rank(data, args.method, weights, **kw)
    paths = emit_reports(args.out, rank_table=table)
    log.info("wrote %s", paths["leaderboard"])
    return 0


def cmd_bootstrap(args) -> int:
    cases = _case_table(args.metrics, args.drop_errors)
    workers = args.workers or EvaluationConfig().with_env().workers
    summary = bootstrap_ranks(cases, args.replicates, args.seed, RankWeights.parse(args.weights), workers)
    paths = emit_reports(args.out, bootstrap=summary)
    log.info("wrote %s", paths["bootstrap"])
    return 0


def cmd_sweep(args) -> int:
    src = Path(args.metrics_dir) / "overlaps.json"
    details = json.loads(src.read_text()) if src.is_file() else None
    if details is None:
        raise MissingFile(f"{src} not found; run evaluate first")
    taus = parse_taus(args.taus)
    report = sweep_report(details, taus, args.bins)
    paths = emit_reports(args.out or args.metrics_dir, sweeps=report)
    log.info("wrote %s", paths["sweep"])
    return 0


def cmd_ensemble(args) -> int:
    masks = [load_label(p) for p in args.inputs.split(",") if p]
    save_volume(args.out, majority_vote(masks))
    return 0


def cmd_synth(args) -> int:
    doc = _read_json(args.params) if args.params else {}
    algorithms = doc.pop("algorithms", None)
    params = SynthParams.from_dict(doc)
    path = synth_challenge(params, algorithms, args.cases, args.out, args.seed, args.format)
    log.info("wrote %s", path)
    return 0


def cmd_ablate(args) -> int:
    if args.input:
        if not args.output:
            raise SchemaViolation("--input needs --output")
        mask = load_label(args.input)
        save_volume(args.output, exclude_region(mask, BoxRegion.parse(args.box, mask.geometry.dims)))
        return 0
    if not (args.manifest and args.out):
        raise SchemaViolation("give either --input/--output or --manifest/--out")
    manifest = read_manifest(args.manifest)
    out = Path(args.out)
    cases = []
    for e in manifest.entries:
        preds = {}
        for algo, p in e.predictions.items():
            if args.subset and e.subset not in args.subset:
                preds[algo] = str(p.resolve())
                continue
            mask = load_label(p)
            dest = out / e.case_id / f"{p.stem}_ablated{p.suffix}"
            dest.parent.mkdir(parents=True, exist_ok=True)
            save_volume(dest, exclude_region(mask, BoxRegion.parse(args.box, mask.geometry.dims)))
            preds[algo] = str(dest.relative_to(out))
        case = {"case_id": e.case_id, "subset": e.subset, "reference": str(e.reference.resolve()),
                "predictions": preds}
        if e.intensity is not None:
            case["intensity"] = str(e.intensity.resolve())
        cases.append(case)
    write_json(out / "manifest.json", {"schema_version": manifest.schema_version, "cases": cases})
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lesionbench", description="Lesion segmentation evaluation and challenge ranking.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("evaluate", help="per-case metrics for every prediction in a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", help="JSON evaluation config")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("rank", help="leaderboard from per-case metrics or subset summaries")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--metrics", help="metrics.csv from evaluate")
    src.add_argument("--summaries", help="wide CSV with <metric>_<subset> columns")
    s.add_argument("--method", choices=METHODS, default="R1")
    s.add_argument("--weights", default="0.5,0.25,0.25", help="dsc,fpv,fnv")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--holm-family", choices=HOLM_FAMILIES, default="metric_subset")
    s.add_argument("--min-pairs", type=int, default=5)
    s.add_argument("--drop-errors", action="store_true", help="skip cases with failed rows")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rank)

    s = sub.add_parser("bootstrap", help="rank stability under stratified case resampling")
    s.add_argument("--metrics", required=True)
    s.add_argument("--replicates", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--weights", default="0.5,0.25,0.25")
    s.add_argument("--workers", type=int)
    s.add_argument("--drop-errors", action="store_true")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_bootstrap)

    s = sub.add_parser("sweep", help="detection sensitivity and taxonomy versus IoU threshold")
    s.add_argument("--metrics-dir", required=True)
    s.add_argument("--taus", default="0.01:0.5:0.01")
    s.add_argument("--bins", type=int, default=10)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("ensemble", help="strict majority vote of binary masks")
    s.add_argument("--inputs", required=True, help="comma-separated mask paths")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("synth", help="write a synthetic challenge and its manifest")
    s.add_argument("--params", help="JSON synth parameters, optional 'algorithms' overrides")
    s.add_argument("--cases", type=int, default=20, help="cases per subset")
    s.add_argument("--seed", type=int)
    s.add_argument("--format", choices=("nifti1", "rawjson"), default="nifti1")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ablate-region", help="clear a box region from prediction masks")
    s.add_argument("--box", required=True, help="x0:x1,y0:y1,z0:z1 (inclusive, negatives from the end)")
    s.add_argument("--input")
    s.add_argument("--output")
    s.add_argument("--manifest")
    s.add_argument("--subset", action="append", help="only ablate these subsets (repeatable)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (LesionBenchError, ValueError, OSError) as exc:
        print(f"lesionbench {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

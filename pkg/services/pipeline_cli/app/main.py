"""Command-line entry point for the ES activity toolkit.

Every subcommand writes its artifacts to ``<out>/<command>/`` together with a
manifest of input digests and a ``metrics.prom`` snapshot. Errors are printed
to stderr as an ErrorResponse JSON document and give exit status 1.
"""
import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import httpx
import numpy as np
import pandas as pd

from services.evaluation_service.app.metrics import score_logs
from services.evaluation_service.app.statistics import load_table, pivot_rows, summarize_table
from services.feedback_service.app.features import FeatureMatrix, WindowSpec, build_feature_matrix, label_windows
from services.feedback_service.app.feedback import (
    WindowProvenance,
    build_alignment_bundle,
    select_top_attributions,
    verbalize_llm,
    verbalize_template,
)
from services.feedback_service.app.isolation_forest import (
    IsolationForestModel,
    anomaly_scores,
    classify,
    fit_forest,
    fit_per_class_forests,
)
from services.feedback_service.app.keypoints import Role, read_keypoints
from services.feedback_service.app.pca import pca_fit, projection_table
from services.feedback_service.app.shapley import AttributionVector, shapley_attribution
from services.pipeline_cli.app.config import (
    RunConfig,
    check_split,
    load_run_config,
    load_split_manifest,
)
from services.pipeline_cli.app.runs import RunDirectory
from services.pipeline_cli.app.synth import video_ref, write_synth_dataset
from services.recognition_service.app.gateway import GatewayMode, GatewaySettings, LLMGateway
from services.recognition_service.app.log_parser import Continuity, LogFormat, parse_file
from services.recognition_service.app.recognition import recognize
from services.recognition_service.app.sequence_validator import validate
from services.shared.domain import ActivityLog
from services.shared.errors import ConfigError, ErrorResponse, PipelineError
from services.shared.logging_config import configure_logging
from services.shared.observability import COMMAND_DURATION, COMMANDS_TOTAL, VALIDATION_VIOLATIONS

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1

Handler = Callable[[argparse.Namespace, RunConfig, RunDirectory], int]


def _paths(inputs: Iterable[Path], suffixes: Sequence[str]) -> List[Path]:
    """Expand files and directories into a sorted file list."""
    found: List[Path] = []
    for path in inputs:
        path = Path(path)
        if path.is_dir():
            found.extend(sorted(p for p in path.iterdir() if p.suffix.lower() in suffixes))
        elif path.exists():
            found.append(path)
        else:
            raise ConfigError(f"Input {path} does not exist")
    return found


def _load_log(path: Path, log_format: str, continuity: str) -> ActivityLog:
    if path.suffix.lower() == ".json":
        try:
            return ActivityLog.read_json(path)
        except PipelineError as e:
            raise e.with_context(str(path)) from None
    return parse_file(path, LogFormat(log_format), Continuity(continuity)).log


def _per_video(config: RunConfig, func: Callable, items: Sequence) -> list:
    """Apply func to every item, n_jobs files at a time, keeping input order."""
    if config.n_jobs == 1 or len(items) < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
        return list(pool.map(func, items))


def _read_matrices(paths: Sequence[Path]) -> FeatureMatrix:
    return FeatureMatrix.concat([FeatureMatrix.read(p) for p in _paths(paths, (".csv",))])


def cmd_parse(args, config: RunConfig, run: RunDirectory) -> int:
    for path in _paths(args.inputs, (".txt",)):
        run.add_inputs(path)
        report = parse_file(path, LogFormat(args.format), Continuity(args.continuity), video_id=args.video_id)
        report.log.write_json(run.file(f"{report.log.video_id}.json"))
        run.write_json(f"{report.log.video_id}.repairs.json", report.repairs_document())
    return EXIT_OK


def cmd_validate(args, config: RunConfig, run: RunDirectory) -> int:
    reports = []
    for path in _paths(args.inputs, (".json", ".txt")):
        run.add_inputs(path)
        report = validate(_load_log(path, args.format, args.continuity))
        for violation in report.violations:
            VALIDATION_VIOLATIONS.labels(kind=violation.kind.value).inc()
        reports.append(report)
        run.write_json(f"{report.video_id}.validation.json", report.model_dump(mode="json"))
    print(json.dumps({r.video_id: r.ok for r in reports}, sort_keys=True))
    if args.strict and not all(r.ok for r in reports):
        return EXIT_FAILURE
    return EXIT_OK


def _pairs(gt_inputs: Sequence[Path], pred_inputs: Sequence[Path]) -> List[tuple]:
    gt = {p.stem: p for p in _paths(gt_inputs, (".json", ".txt"))}
    pred = {p.stem: p for p in _paths(pred_inputs, (".json", ".txt"))}
    common = sorted(set(gt) & set(pred))
    if not common:
        raise ConfigError("No ground-truth/prediction pairs share a video id")
    for missing in sorted(set(gt) ^ set(pred)):
        logger.warning(f"Skipping {missing}: no matching ground truth or prediction")
    return [(gt[v], pred[v]) for v in common]


def cmd_score(args, config: RunConfig, run: RunDirectory) -> int:
    gt_inputs = args.gt or ([config.gt_dir] if config.gt_dir else [])
    pred_inputs = args.pred or ([config.pred_dir] if config.pred_dir else [])
    if not gt_inputs or not pred_inputs:
        raise ConfigError("score needs --gt and --pred (or gt_dir/pred_dir in the config)")
    pairs = _pairs(gt_inputs, pred_inputs)
    for gt_path, pred_path in pairs:
        run.add_inputs(gt_path, pred_path)

    def score_pair(pair):
        gt_path, pred_path = pair
        return score_logs(
            _load_log(gt_path, args.format, args.continuity),
            _load_log(pred_path, args.format, args.continuity),
            resolution=config.resolution,
            exclude_others=config.exclude_others,
        )

    reports = _per_video(config, score_pair, pairs)
    rows = [report.to_row(args.system) for report in reports]
    run.write_json("metrics.json", [report.model_dump(mode="json") for report in reports])
    pd.DataFrame(rows).to_csv(run.file("rows.csv"), index=False)
    print(json.dumps(rows, sort_keys=True))
    return EXIT_OK


def cmd_aggregate(args, config: RunConfig, run: RunDirectory) -> int:
    tables = []
    for path in _paths(args.inputs, (".csv",)):
        run.add_inputs(path)
        table = load_table(path)
        tables.append(pivot_rows(table) if "system" in table.columns else table)
    merged = tables[0]
    for table in tables[1:]:
        merged = merged.merge(table, on="video_id", how="outer")
    summary = summarize_table(merged, baseline=args.baseline, test=args.test)
    run.write_json("summary.json", summary.model_dump(mode="json"))
    markdown = summary.to_markdown()
    run.write_text("summary.md", markdown)
    print(markdown)
    return EXIT_OK


def cmd_extract(args, config: RunConfig, run: RunDirectory) -> int:
    spec = WindowSpec(length_s=config.window_s, stride_s=config.stride_s)
    gt_dir = Path(args.labels or config.gt_dir) if (args.labels or config.gt_dir) else None
    inputs = args.inputs or ([config.keypoint_dir] if config.keypoint_dir else [])
    if not inputs:
        raise ConfigError("extract needs keypoint files or keypoint_dir in the config")
    paths = _paths(inputs, (".json", ".csv"))
    run.add_inputs(*paths)
    kwargs = {"role": Role(args.role)} if args.role else {}

    def extract(path: Path) -> FeatureMatrix:
        series = read_keypoints(path, config.fps if path.suffix.lower() == ".csv" else None, **kwargs)
        matrix = build_feature_matrix(series, spec, config.conf_threshold)
        gt_path = gt_dir / f"{series.video_id}.json" if gt_dir else None
        if gt_path is not None and gt_path.exists():
            matrix = label_windows(matrix, ActivityLog.read_json(gt_path))
        return matrix

    matrices = _per_video(config, extract, paths)
    if gt_dir is not None:
        run.add_inputs(*sorted(gt_dir.glob("*.json")))
    FeatureMatrix.concat(matrices).write(run.file("features.csv"))
    run.artifacts.append("features.json")
    return EXIT_OK


def cmd_train(args, config: RunConfig, run: RunDirectory) -> int:
    run.add_inputs(*args.inputs)
    matrix = _read_matrices(args.inputs)
    if args.train_role and any(matrix.roles):
        matrix = matrix.rows_where([role == args.train_role for role in matrix.roles])
        logger.info(f"Training on {matrix.n_rows} {args.train_role} windows")
    if args.per_class:
        forests = fit_per_class_forests(matrix, config.n_trees, config.psi, config.seed, config.n_jobs)
        for label, forest in forests.items():
            forest.save(run.file(f"forest_class{label}.json"))
    else:
        forest = fit_forest(matrix, config.n_trees, config.psi, config.seed, n_jobs=config.n_jobs)
        forest.save(run.file("forest.json"))
        scores = anomaly_scores(forest, matrix.values)
        run.write_json("training_scores.json", {"mean": float(scores.mean()), "max": float(scores.max())})
    return EXIT_OK


def cmd_explain(args, config: RunConfig, run: RunDirectory) -> int:
    model_path = args.model or config.model_path
    if model_path is None:
        raise ConfigError("explain needs --model")
    run.add_inputs(model_path, *args.inputs, *args.background)
    forest = IsolationForestModel.load(model_path)
    windows = _read_matrices(args.inputs)
    background = _read_matrices(args.background)
    if any(background.roles):
        nurse = background.rows_where([role == Role.NURSE.value for role in background.roles])
        background = nurse if nurse.n_rows else background

    scores = anomaly_scores(forest, windows.values)
    row = int(np.argmax(scores)) if args.row is None else args.row
    if not 0 <= row < windows.n_rows:
        raise ConfigError(f"Row {row} is outside the {windows.n_rows} windows")
    attribution = shapley_attribution(
        forest, windows.values[row], background, config.n_permutations, config.seed
    )
    attribution.write_csv(run.file("attributions.csv"))
    start = float(windows.window_starts[row])
    provenance = WindowProvenance(
        video_id=windows.video_ids[row],
        start_s=start,
        stop_s=start + windows.window_spec.length_s,
        window_index=row,
        role=windows.roles[row] or None,
    )
    document = attribution.to_dict()
    document["provenance"] = provenance.model_dump(mode="json")
    run.write_json("attribution.json", document)
    print(json.dumps({"row": row, "score": attribution.score, "verdict": classify(attribution.score, config.threshold)}))
    return EXIT_OK


def _gateway(config: RunConfig, mode: Optional[str], transport: Optional[httpx.BaseTransport]) -> LLMGateway:
    overrides = {"fixture_dir": config.fixture_dir}
    if mode:
        overrides["mode"] = GatewayMode(mode)
    return LLMGateway(GatewaySettings(**overrides), transport=transport)


def cmd_feedback(args, config: RunConfig, run: RunDirectory, transport=None) -> int:
    run.add_inputs(args.attribution)
    document = json.loads(Path(args.attribution).read_text(encoding="utf-8"))
    attribution = AttributionVector.from_dict(document)
    provenance = WindowProvenance(**document.get("provenance", {"video_id": "", "start_s": 0, "stop_s": 0}))
    if args.renderer == "llm":
        with _gateway(config, args.mode, transport) as gateway:
            report = verbalize_llm(gateway, attribution, config.top_k, config.threshold)
    else:
        verdict = classify(attribution.score, config.threshold)
        top = select_top_attributions(attribution, config.top_k)
        report = verbalize_template(verdict, top, None, attribution, attribution.score, config.threshold)
    build_alignment_bundle(report, attribution, provenance, out_dir=run.path / "bundle")
    run.artifacts.append("bundle")
    print(report.to_markdown())
    return EXIT_OK


def cmd_recognize(args, config: RunConfig, run: RunDirectory, transport=None) -> int:
    gt_dir = args.gt or config.gt_dir
    video_ids = list(args.videos)
    if not video_ids and gt_dir:
        video_ids = sorted(p.stem for p in _paths([gt_dir], (".json",)))
    if not video_ids:
        raise ConfigError("recognize needs video ids or a ground-truth directory")
    rows, all_ok = [], True
    with _gateway(config, args.mode, transport) as gateway:
        for video_id in video_ids:
            report = recognize(gateway, video_ref(video_id), args.prompt, video_id=video_id)
            report.log.write_json(run.file(f"{video_id}.json"))
            run.write_json(f"{video_id}.repairs.json", report.repairs_document())
            validation = validate(report.log)
            for violation in validation.violations:
                VALIDATION_VIOLATIONS.labels(kind=violation.kind.value).inc()
            all_ok = all_ok and validation.ok
            run.write_json(f"{video_id}.validation.json", validation.model_dump(mode="json"))
            gt_path = Path(gt_dir) / f"{video_id}.json" if gt_dir else None
            if gt_path is not None and gt_path.exists():
                run.add_inputs(gt_path)
                metrics = score_logs(ActivityLog.read_json(gt_path), report.log, config.resolution)
                run.write_json(f"{video_id}.metrics.json", metrics.model_dump(mode="json"))
                rows.append(metrics.to_row(f"prompt_{args.prompt.lower()}"))
    if rows:
        pd.DataFrame(rows).to_csv(run.file("rows.csv"), index=False)
    print(json.dumps(rows, sort_keys=True))
    if args.strict and not all_ok:
        return EXIT_FAILURE
    return EXIT_OK


def cmd_synth(args, config: RunConfig, run: RunDirectory) -> int:
    target = Path(args.target)
    summary = write_synth_dataset(target, args.videos, config.seed, config.fps, args.seconds)
    run.write_json("synth.json", {"target": str(target), **summary})
    return EXIT_OK


def cmd_pca(args, config: RunConfig, run: RunDirectory) -> int:
    run.add_inputs(*args.inputs)
    matrix = _read_matrices(args.inputs)
    model = pca_fit(matrix, config.pca_components)
    model.save(run.file("pca.json"))
    projection_table(model, matrix).to_csv(run.file("projection.csv"), index=False)
    return EXIT_OK


def cmd_check_split(args, config: RunConfig, run: RunDirectory) -> int:
    manifest_path = args.manifest or config.split_manifest
    if manifest_path is None:
        raise ConfigError("check-split needs a manifest")
    run.add_inputs(manifest_path)
    violations = check_split(load_split_manifest(manifest_path))
    run.write_json("split_check.json", [v.model_dump() for v in violations])
    print(json.dumps({"ok": not violations, "violations": [v.participant for v in violations]}))
    return EXIT_FAILURE if violations else EXIT_OK


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", dest="out_dir", type=Path, help="Root directory for run outputs")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", dest="n_jobs", type=int, help="Files processed in parallel")
    common.add_argument("--split-manifest", dest="split_manifest", type=Path)
    common.add_argument("--log-level", dest="log_level")
    common.add_argument("--plain-logs", dest="json_logs", action="store_const", const=False)
    common.add_argument("--strict", action="store_true", help="Exit 1 on validation violations")
    return common


def _log_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--format", choices=[f.value for f in LogFormat], default="A")
    parser.add_argument("--continuity", choices=[c.value for c in Continuity], default="stitch")


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="es-toolkit", description="ES activity recognition toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", parents=[common], help="LLM response text → activity log JSON")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--video-id")
    _log_options(p)

    p = sub.add_parser("validate", parents=[common], help="Check logs against the procedure grammar")
    p.add_argument("inputs", nargs="+", type=Path)
    _log_options(p)

    p = sub.add_parser("score", parents=[common], help="Interval accuracy and macro-F1 of predictions")
    p.add_argument("--gt", nargs="+", type=Path)
    p.add_argument("--pred", nargs="+", type=Path)
    p.add_argument("--system", default="llm")
    p.add_argument("--resolution", type=float)
    p.add_argument("--exclude-others", dest="exclude_others", action="store_const", const=True)
    _log_options(p)

    p = sub.add_parser("aggregate", parents=[common], help="Per-system means and t-tests")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--baseline", default="baseline")
    p.add_argument("--test", choices=["paired", "welch"], default="paired")

    p = sub.add_parser("extract", parents=[common], help="Keypoint series → window features")
    p.add_argument("inputs", nargs="*", type=Path)
    p.add_argument("--fps", type=float)
    p.add_argument("--window", dest="window_s", type=float)
    p.add_argument("--stride", dest="stride_s", type=float)
    p.add_argument("--conf-threshold", dest="conf_threshold", type=float)
    p.add_argument("--role", choices=[r.value for r in Role])
    p.add_argument("--labels", type=Path, help="Ground-truth log directory for window labels")

    p = sub.add_parser("train", parents=[common], help="Fit an Isolation Forest on nurse windows")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--trees", dest="n_trees", type=int)
    p.add_argument("--psi", type=int)
    p.add_argument("--train-role", default=Role.NURSE.value)
    p.add_argument("--per-class", action="store_true")

    p = sub.add_parser("explain", parents=[common], help="Shapley attribution of one window's score")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--model", type=Path)
    p.add_argument("--background", nargs="+", type=Path, required=True)
    p.add_argument("--row", type=int)
    p.add_argument("--permutations", dest="n_permutations", type=int)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("feedback", parents=[common], help="Attribution → student report and bundle")
    p.add_argument("attribution", type=Path)
    p.add_argument("--renderer", choices=["template", "llm"], default="template")
    p.add_argument("--mode", choices=[m.value for m in GatewayMode])
    p.add_argument("--fixture-dir", dest="fixture_dir", type=Path)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("recognize", parents=[common], help="Video → prompt → LLM → parsed log")
    p.add_argument("videos", nargs="*")
    p.add_argument("--prompt", choices=["A", "B"], default="A")
    p.add_argument("--mode", choices=[m.value for m in GatewayMode])
    p.add_argument("--fixture-dir", dest="fixture_dir", type=Path)
    p.add_argument("--gt", type=Path, help="Ground-truth directory to score against")
    p.add_argument("--resolution", type=float)

    p = sub.add_parser("synth", parents=[common], help="Write a synthetic dataset")
    p.add_argument("target", type=Path)
    p.add_argument("--videos", type=int, default=4)
    p.add_argument("--seconds", type=float, default=30.0)
    p.add_argument("--fps", type=float)

    p = sub.add_parser("pca", parents=[common], help="PCA posture space of feature windows")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--k", dest="pca_components", type=int)

    p = sub.add_parser("check-split", parents=[common], help="Participant leakage check")
    p.add_argument("manifest", nargs="?", type=Path)
    return parser


COMMANDS: Dict[str, Handler] = {
    "parse": cmd_parse,
    "validate": cmd_validate,
    "score": cmd_score,
    "aggregate": cmd_aggregate,
    "extract": cmd_extract,
    "train": cmd_train,
    "explain": cmd_explain,
    "feedback": cmd_feedback,
    "recognize": cmd_recognize,
    "synth": cmd_synth,
    "pca": cmd_pca,
    "check-split": cmd_check_split,
}
_NETWORK_COMMANDS = {"feedback", "recognize"}


def _overrides(args: argparse.Namespace) -> dict:
    return {name: getattr(args, name, None) for name in RunConfig.model_fields}


def _report_error(exc: Exception) -> None:
    sys.stderr.write(ErrorResponse.from_exception(exc).model_dump_json() + "\n")


def run(argv: Optional[Sequence[str]] = None, transport: Optional[httpx.BaseTransport] = None) -> int:
    """Parse arguments, execute one subcommand and return its exit status.

    Args:
        argv: Arguments without the program name (default: sys.argv[1:])
        transport: httpx transport for the LLM gateway (tests inject a mock)
    """
    args = build_parser().parse_args(argv)
    command = args.command
    try:
        config = load_run_config(args.config, _overrides(args))
    except ConfigError as e:
        _report_error(e)
        COMMANDS_TOTAL.labels(command=command, status="error").inc()
        return EXIT_FAILURE
    configure_logging(config.log_level, config.json_logs)

    run_dir = RunDirectory(config.out_dir, command).open()
    run_dir.add_inputs(args.config)
    handler = COMMANDS[command]
    try:
        with COMMAND_DURATION.labels(command=command).time():
            if command in _NETWORK_COMMANDS:
                status = handler(args, config, run_dir, transport=transport)
            else:
                status = handler(args, config, run_dir)
    except PipelineError as e:
        logger.error(f"{command} failed: {e}")
        _report_error(e)
        status = EXIT_FAILURE
    except Exception as e:
        logger.exception(f"{command} failed unexpectedly")
        _report_error(e)
        status = EXIT_FAILURE

    COMMANDS_TOTAL.labels(command=command, status="ok" if status == EXIT_OK else "error").inc()
    run_dir.finalize(config.model_dump(mode="json", exclude={"log_level", "json_logs"}))
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

# main.py
import argparse
import dataclasses
import json
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import List, Optional, Sequence

try:
    from config import APP_CONFIG
    from core.errors import DataError, FerError, UsageError
    from core.evaluation_coordinator import EvaluationCoordinator
    from core.models import PipelineConfig
    from core.pipeline_enums import LbpVariant
    from core.pipeline_orchestrator import PipelineOrchestrator
    from services.model_store_service import ModelStoreService
    from utils import constants
    from utils.constants import (APP_NAME, APP_VERSION, CONSOLE_LOG_FORMAT, LOG_FILE_NAME, LOG_FORMAT,
                                 USER_DATA_DIR)
    from utils.report_printer import ReportPrinter
    from utils.synthetic_faces import write_dataset
except ImportError as e:
    print(f"[CRITICAL] Failed to import core components in main.py: {e}", file=sys.stderr)
    print(f"PYTHONPATH: {sys.path}", file=sys.stderr)
    sys.exit(3)

logger = logging.getLogger(__name__)


# --- Logging Setup ---

def configure_logging(level_name: Optional[str] = None) -> str:
    """Rotating file log at LOG_LEVEL plus a WARNING console handler. Returns the log path."""
    log_level_actual = getattr(logging, (level_name or APP_CONFIG.get("log_level", "DEBUG")).upper(), logging.INFO)
    root_logger = logging.getLogger()
    root_logger.setLevel(log_level_actual)
    root_logger.handlers.clear()

    log_file_path = os.path.join(USER_DATA_DIR, LOG_FILE_NAME)
    try:
        os.makedirs(USER_DATA_DIR, exist_ok=True)
        file_handler = RotatingFileHandler(log_file_path, maxBytes=5 * 1024 * 1024, backupCount=3, encoding='utf-8')
        file_handler.setLevel(log_level_actual)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root_logger.addHandler(file_handler)
    except OSError as e_dir:
        print(f"[WARNING] Could not open log file {log_file_path}: {e_dir}", file=sys.stderr)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.WARNING)
    console_handler.setFormatter(logging.Formatter(CONSOLE_LOG_FORMAT))
    root_logger.addHandler(console_handler)

    logging.getLogger("PIL").setLevel(logging.INFO)
    logging.getLogger("PIL.PngImagePlugin").setLevel(logging.INFO)
    return log_file_path
# --- End Logging Setup ---


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- Argument helpers ---

def _variant(text: str) -> LbpVariant:
    text = text.strip().lower()
    try:
        return LbpVariant.from_name(f"bins{text}" if text.isdigit() else text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _int_list(text: str) -> List[int]:
    """Comma-separated integers and inclusive ranges, e.g. 1,4,8 or 1-19."""
    values = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = (int(v) for v in part.split("-", 1))
                values.extend(range(lo, hi + 1))
            elif part:
                values.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like '1,4,8' or '1-19', got {text!r}") from None
    return values


def _variant_list(text: str) -> List[LbpVariant]:
    return [_variant(part) for part in text.split(",") if part.strip()]


def _add_config_args(parser: argparse.ArgumentParser, randomized: bool = True) -> None:
    parser.add_argument("--resolution", type=int, help="aligned face size R (48, 96, 144 or 192)")
    parser.add_argument("--bins", type=_variant, dest="variant", help="bins256, bins32, bins16 (or 16), u2, riu2")
    parser.add_argument("--top-k", type=int, dest="top_k", help="salient patches per expression pair")
    parser.add_argument("--no-cascades", action="store_true", help="skip detection; use the fallback landmarks")
    parser.add_argument("--cascade-dir", help="directory holding face.txt, eye.txt and nose.txt")
    parser.add_argument("--workers", type=int, help="worker threads")
    if randomized:
        parser.add_argument("--seed", type=int, help="random seed")
        parser.add_argument("--grid-search", action="store_true", help="choose C and gamma by inner cross-validation")


def _config_from_args(args: argparse.Namespace, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    overrides = {}
    for name in ("resolution", "variant", "top_k", "seed", "workers", "cascade_dir"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "no_cascades", False):
        overrides["use_cascades"] = False
    if getattr(args, "grid_search", False):
        overrides["grid_search"] = True
    return dataclasses.replace(base or PipelineConfig(), **overrides)


def _load_model(args: argparse.Namespace):
    store = ModelStoreService()
    model = store.load(args.model)
    runtime = {k: v for k, v in (("workers", args.workers), ("cascade_dir", args.cascade_dir)) if v is not None}
    return store.with_runtime(model, **runtime) if runtime else model


# --- Commands ---

def cmd_train(args, printer: ReportPrinter) -> int:
    orchestrator = PipelineOrchestrator(_config_from_args(args))
    manifest = orchestrator.datasets.load_manifest(args.data)
    orchestrator.datasets.require_classes(manifest, 2)
    feature_set = orchestrator.featurize(manifest)
    if args.dump_features:
        orchestrator.dump_features(feature_set, args.dump_features)
    model = orchestrator.train_from_blocks(feature_set)
    orchestrator.model_store.save(model, args.out)
    printer.message(f"Trained on {feature_set.labels.size} image(s); model written to {args.out}")
    printer.print_failures(feature_set.failures)
    return 0


def cmd_predict(args, printer: ReportPrinter) -> int:
    model = _load_model(args)
    orchestrator = PipelineOrchestrator(model.config)
    prediction = orchestrator.predict(model, args.image)
    if args.json:
        payload = {
            "image": args.image,
            "label": None if prediction.no_face else prediction.label.display_name,
            "no_face": prediction.no_face,
            "votes": list(prediction.votes),
        }
        print(json.dumps(payload))
    else:
        printer.print_prediction(args.image, prediction)
    return 0


def _print_reference(printer: ReportPrinter, orchestrator: PipelineOrchestrator, report, tag: Optional[str]) -> None:
    if tag:
        printer.print_reference(orchestrator.metrics.reference_comparison(report, tag), tag)


def cmd_evaluate(args, printer: ReportPrinter) -> int:
    model = _load_model(args)
    orchestrator = PipelineOrchestrator(model.config)
    manifest = orchestrator.datasets.load_manifest(args.data)
    report = EvaluationCoordinator(orchestrator).evaluate(model, manifest)
    printer.print_report(report)
    _print_reference(printer, orchestrator, report, args.reference)
    return 0


def cmd_crossval(args, printer: ReportPrinter) -> int:
    orchestrator = PipelineOrchestrator(_config_from_args(args))
    manifest = orchestrator.datasets.load_manifest(args.data)
    coordinator = EvaluationCoordinator(orchestrator)
    feature_set = orchestrator.featurize(manifest)
    if args.dump_features:
        orchestrator.dump_features(feature_set, args.dump_features)
    report = coordinator.cross_validate_blocks(feature_set, args.folds, orchestrator.config.seed)
    printer.print_report(report)
    _print_reference(printer, orchestrator, report, args.reference)
    return 0


def cmd_fused(args, printer: ReportPrinter) -> int:
    if len(args.data) < 2:
        raise UsageError("fused needs at least two --data manifests")
    orchestrator = PipelineOrchestrator(_config_from_args(args))
    manifest = orchestrator.datasets.load_many(args.data)
    reports = EvaluationCoordinator(orchestrator).fused_protocol(manifest, args.repeats)
    printer.print_fused(reports)
    return 0


def cmd_landmarks(args, printer: ReportPrinter) -> int:
    orchestrator = PipelineOrchestrator(_config_from_args(args))
    if args.data:
        manifest = orchestrator.datasets.load_manifest(args.data)
        evaluation = EvaluationCoordinator(orchestrator).evaluate_landmarks(manifest)
        printer.print_landmark_evaluation(evaluation)
        if args.cdf:
            orchestrator.metrics.write_cdf_csv(args.cdf, evaluation.thresholds, evaluation.cdf)
        return 0

    result = orchestrator.preprocess(args.image)
    if not result.ok:
        raise DataError(f"{args.image}: {result.failure}")
    landmarks = result.face.landmarks
    printer.print_landmarks([(name, landmarks[name].x, landmarks[name].y,
                              landmarks.provenance_of(name).name.lower()) for name in landmarks.names()])
    if args.truth:
        truth = orchestrator.landmarks.read_landmarks(args.truth, orchestrator.config.resolution)
        printer.message(f"Normalised landmark error e = {orchestrator.landmarks.landmark_error(landmarks, truth):.4f}")
    if args.out:
        orchestrator.landmarks.write_landmarks(landmarks, args.out, orchestrator.config.resolution)
    if args.overlay:
        overlay = orchestrator.image_io.draw_crosses(result.face.image, landmarks.points.values())
        orchestrator.image_io.write_pgm(overlay, args.overlay)
        printer.message(f"Overlay written to {args.overlay}")
    return 0


def cmd_saliency(args, printer: ReportPrinter) -> int:
    orchestrator = PipelineOrchestrator(_config_from_args(args))
    manifest = orchestrator.datasets.load_manifest(args.data)
    orchestrator.datasets.require_classes(manifest, 2)
    feature_set = orchestrator.featurize(manifest)
    if args.dump_features:
        orchestrator.dump_features(feature_set, args.dump_features)
    table, selection = orchestrator.saliency_from_blocks(feature_set)
    orchestrator.saliency.write_table_csv(table, args.out)
    if args.selection_out:
        with open(args.selection_out, "w", encoding="utf-8", newline="\n") as handle:
            handle.write("\n".join(orchestrator.saliency.format_selection(selection)) + "\n")
    printer.print_saliency(table, selection)
    printer.print_overlap(*orchestrator.saliency.reference_overlap(selection))
    return 0


def cmd_layout(args, printer: ReportPrinter) -> int:
    orchestrator = PipelineOrchestrator(_config_from_args(args))
    result = orchestrator.preprocess(args.image, args.landmarks)
    if not result.ok:
        raise DataError(f"{args.image}: {result.failure}")
    layout = orchestrator.patches.layout_patches(result.face.landmarks, orchestrator.config.resolution)
    print(orchestrator.patches.format_layout(layout), end="")
    if args.overlay:
        overlay = orchestrator.image_io.draw_boxes(result.face.image, layout.boxes)
        orchestrator.image_io.write_pgm(overlay, args.overlay)
        printer.message(f"Overlay written to {args.overlay}")
    return 0


def cmd_sweep(args, printer: ReportPrinter) -> int:
    orchestrator = PipelineOrchestrator(_config_from_args(args))
    manifest = orchestrator.datasets.load_manifest(args.data)
    rows = EvaluationCoordinator(orchestrator).resolution_variant_sweep(
        manifest, args.resolutions, args.variants, args.folds)
    printer.print_sweep(rows)
    return 0


def cmd_topk(args, printer: ReportPrinter) -> int:
    orchestrator = PipelineOrchestrator(_config_from_args(args))
    manifest = orchestrator.datasets.load_manifest(args.data)
    bad = [k for k in args.ks if not 1 <= k <= constants.NUM_PATCHES]
    if bad:
        raise UsageError(f"--ks values must lie in [1, {constants.NUM_PATCHES}], got {bad}")
    rows = EvaluationCoordinator(orchestrator).topk_sweep(manifest, args.ks, args.folds)
    printer.print_topk(rows)
    return 0


def cmd_transfer(args, printer: ReportPrinter) -> int:
    orchestrator = PipelineOrchestrator(_config_from_args(args))
    train = orchestrator.datasets.load_manifest(args.train)
    test = orchestrator.datasets.load_manifest(args.test)
    report = EvaluationCoordinator(orchestrator).transfer(train, test)
    printer.print_report(report)
    _print_reference(printer, orchestrator, report, args.reference)
    return 0


def cmd_synth(args, printer: ReportPrinter) -> int:
    seed = constants.DEFAULT_SEED if args.seed is None else args.seed
    manifest_path = write_dataset(args.out, args.per_class, seed, args.size, args.source)
    printer.message(f"Synthetic dataset written; manifest at {manifest_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="patchfer", description=f"{APP_NAME} v{APP_VERSION}: facial expression recognition "
                                                   "from salient facial patches.")
    parser.add_argument("--log-level", help="file log level (default from FERSP_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    references = sorted(constants.REFERENCE_VALUES)

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-features")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--json", action="store_true")
    p.add_argument("--workers", type=int)
    p.add_argument("--cascade-dir")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="test a trained model on a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--reference", choices=references)
    p.add_argument("--workers", type=int)
    p.add_argument("--cascade-dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("crossval", help="stratified k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, default=constants.DEFAULT_FOLDS)
    p.add_argument("--reference", choices=references)
    p.add_argument("--dump-features")
    _add_config_args(p)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("fused", help="train on pooled sources, test each source")
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--repeats", type=int, default=constants.DEFAULT_REPEATS)
    _add_config_args(p)
    p.set_defaults(func=cmd_fused)

    p = sub.add_parser("landmarks", help="locate landmarks in one image or score a manifest")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--image")
    source.add_argument("--data")
    p.add_argument("--truth")
    p.add_argument("--out", help="write the located landmarks")
    p.add_argument("--overlay")
    p.add_argument("--cdf", help="CSV for the cumulative error table")
    _add_config_args(p, randomized=False)
    p.set_defaults(func=cmd_landmarks)

    p = sub.add_parser("saliency", help="score every patch for every expression pair")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--selection-out")
    p.add_argument("--dump-features")
    _add_config_args(p)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("layout", help="print the 19-patch layout of one image")
    p.add_argument("--image", required=True)
    p.add_argument("--landmarks")
    p.add_argument("--overlay")
    _add_config_args(p, randomized=False)
    p.set_defaults(func=cmd_layout)

    p = sub.add_parser("sweep", help="cross-validate every resolution and binning")
    p.add_argument("--data", required=True)
    p.add_argument("--resolutions", type=_int_list, default=list(constants.SUPPORTED_RESOLUTIONS))
    p.add_argument("--variants", type=_variant_list, default=list(LbpVariant))
    p.add_argument("--folds", type=int, default=constants.DEFAULT_FOLDS)
    _add_config_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("topk", help="cross-validate a range of salient patch counts")
    p.add_argument("--data", required=True)
    p.add_argument("--ks", type=_int_list, default=list(range(1, constants.NUM_PATCHES + 1)))
    p.add_argument("--folds", type=int, default=constants.DEFAULT_FOLDS)
    _add_config_args(p)
    p.set_defaults(func=cmd_topk)

    p = sub.add_parser("transfer", help="train on one dataset, evaluate on another")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--reference", choices=references)
    _add_config_args(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("synth", help="write the synthetic face dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=constants.SYNTH_PER_CLASS)
    p.add_argument("--size", type=int, default=constants.SYNTH_IMAGE_SIZE)
    p.add_argument("--source", default="synthetic")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return constants.EXIT_USAGE
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except SystemExit as e:  # --help
        return int(e.code or 0)

    log_file_path = configure_logging(args.log_level)
    logger.info(f"--- {APP_NAME} v{APP_VERSION}: {args.command} --- (log: {log_file_path})")
    printer = ReportPrinter()
    try:
        return args.func(args, printer)
    except FerError as e:
        logger.error(f"{args.command} failed: {e}")
        printer.message(f"error: {e}", "bold red")
        return e.exit_code
    except Exception as e:
        logger.critical(f"Unhandled exception in '{args.command}': {e}", exc_info=True)
        printer.message(f"unexpected error: {e}", "bold red")
        return constants.EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface binding the library into reproducible workflows.

Every artifact-producing command writes a run manifest next to its outputs.
Exit codes follow sysexits: 64 unknown command / bad usage, 65 invalid config
or malformed data, 70 numerical divergence, 74 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, SpottingConfig
from .data import (
    AnnotationError,
    FeatureFileError,
    load_annotations,
    load_features,
    load_split,
)
from .gradcheck import check_model_gradients, check_point_gradients
from .highlights import (
    ETA_GRID,
    build_reel,
    detect_opportunity_segments,
    precision_vs_threshold,
)
from .metrics import build_report
from .model import (
    CheckpointError,
    DivergenceError,
    load_checkpoint,
    predict_video,
    save_checkpoint,
    train,
)
from .synth import SynthSpec, generate_dataset
from .tse import tse_video, write_tse_csv

EX_OK = 0
EX_FAIL = 1
EX_USAGE = 64
EX_DATAERR = 65
EX_SOFTWARE = 70
EX_IOERR = 74


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _hash_inputs(paths: list[Path]) -> str:
    digest = hashlib.sha256()
    for path in sorted(paths):
        if path.is_dir():
            for child in sorted(path.rglob("*")):
                if child.is_file() and not child.name.endswith("manifest.json"):
                    digest.update(child.name.encode())
                    digest.update(_hash_file(child).encode())
        elif path.is_file():
            digest.update(_hash_file(path).encode())
    return digest.hexdigest()


def write_manifest(
    out: Path, command: str, args: argparse.Namespace, started: float,
    outputs: list[Path], config_hash: str = "", data_hash: str = "",
) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "seed": getattr(args, "seed", None),
        "config_hash": config_hash,
        "data_hash": data_hash,
        "tool_version": __version__,
        "started_at": started,
        "finished_at": time.time(),
        "outputs": [str(p) for p in outputs],
    }
    if out.is_dir():
        target = out / "run_manifest.json"
    else:
        target = out.with_name(out.name + ".manifest.json")
    target.write_text(json.dumps(manifest, indent=1))


def _load_config(args) -> SpottingConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "config", None):
        cfg = SpottingConfig.from_json(args.config)
        return cfg.with_overrides(**overrides) if overrides else cfg
    return SpottingConfig(**overrides)


def cmd_synth(args) -> int:
    started = time.time()
    spec = SynthSpec.from_json(args.spec) if args.spec else SynthSpec()
    if args.seed is not None:
        spec = SynthSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    out = Path(args.out)
    try:
        manifest = generate_dataset(spec, out)
    except OSError as exc:
        raise CliError(EX_IOERR, f"cannot write dataset: {exc}") from exc
    write_manifest(out, "synth", args, started, [out], config_hash=spec.spec_hash())
    print(f"wrote {sum(len(v) for v in manifest['splits'].values())} videos to {out}")
    return EX_OK


def cmd_encode(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    annotations = load_annotations(args.annotations)
    if max((c for c, _ in annotations.actions), default=-1) >= cfg.num_classes:
        raise CliError(EX_DATAERR, "annotation classes exceed config num_classes")
    tse_map = tse_video(annotations, cfg)
    out = Path(args.out)
    write_tse_csv(tse_map, out)
    write_manifest(
        out, "encode", args, started, [out],
        config_hash=cfg.config_hash(), data_hash=_hash_inputs([Path(args.annotations)]),
    )
    print(f"encoded {annotations.num_frames} frames x {cfg.num_classes} classes -> {out}")
    return EX_OK


def cmd_train(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    data_dir = Path(args.data)
    train_videos = load_split(data_dir / "train" if (data_dir / "train").is_dir() else data_dir)
    val_dir = data_dir / "val"
    val_videos = load_split(val_dir) if val_dir.is_dir() else []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log = (lambda rec: print(
        f"epoch {rec['epoch']:4d} loss {rec['train_loss']:.4f} "
        f"val {rec['val_average_map']}"
    )) if args.verbose else None
    params, history = train(train_videos, val_videos, cfg, log=log)
    checkpoint = out / "model.ckpt"
    save_checkpoint(checkpoint, params, cfg)
    (out / "config.json").write_text(cfg.canonical_json())
    (out / "history.json").write_text(json.dumps(history, indent=1))
    if args.dump_matchings:
        _dump_final_matchings(train_videos, params, cfg, Path(args.dump_matchings))
    write_manifest(
        out, "train", args, started,
        [checkpoint, out / "config.json", out / "history.json"],
        config_hash=cfg.config_hash(), data_hash=_hash_inputs([data_dir]),
    )
    best = max((h["val_average_map"] for h in history if h["val_average_map"] is not None),
               default=None)
    print(f"trained {cfg.epochs} epochs; best validation Average-mAP: {best}")
    return EX_OK


def _dump_final_matchings(videos, params, cfg, path: Path) -> None:
    """Matchings of one final sampling pass, for debugging."""
    from .model import forward
    from .spot_loss import iterative_match, yolo_encode
    from .data import sample_chunks

    rng = np.random.default_rng(cfg.seed)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["video_id", "chunk_index", "gt_row", "pred_row"])
        for features, annotations in videos:
            chunks = sample_chunks(annotations, features, cfg, rng)
            if not chunks:
                continue
            feats = np.stack([c.features for c in chunks]).astype(np.float64)
            trace = forward(feats, params, cfg)
            for i, chunk in enumerate(chunks):
                y = yolo_encode(list(chunk.actions), cfg.chunk_frames, cfg.num_classes)
                matching = iterative_match(y[:, 1], trace.predictions.data[i, :, 1])
                for g, p in matching.pairs:
                    writer.writerow([annotations.video_id, i, g, p])


def cmd_predict(args) -> int:
    started = time.time()
    model_path = Path(args.model)
    config_path = args.config or model_path.with_name("config.json")
    cfg = SpottingConfig.from_json(config_path)
    params = load_checkpoint(model_path, cfg)
    features = load_features(args.features)
    spots, curves = predict_video(
        features, params, cfg,
        confidence_threshold=args.confidence_threshold,
        dedup_window_seconds=args.dedup_window,
    )
    payload = {
        "video_id": features.video_id,
        "fps": cfg.fps,
        "num_frames": features.num_frames,
        "spots": [
            {"class": c, "frame": f, "confidence": conf} for c, f, conf in spots
        ],
        "segmentation": [[float(v) for v in row] for row in curves],
    }
    out = Path(args.out)
    out.write_text(json.dumps(payload))
    write_manifest(
        out, "predict", args, started, [out],
        config_hash=cfg.config_hash(),
        data_hash=_hash_inputs([Path(args.features), model_path]),
    )
    print(f"{features.video_id}: {len(spots)} spots -> {out}")
    return EX_OK


def _load_predictions(path: Path) -> dict[str, dict]:
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    out = {}
    for file in files:
        if file.name.endswith("manifest.json"):
            continue
        payload = json.loads(file.read_text())
        out[payload["video_id"]] = payload
    if not out:
        raise CliError(EX_DATAERR, f"no prediction files under {path}")
    return out


def _load_gts(path: Path):
    if path.is_dir():
        files = sorted(path.glob("*.annotations.json")) or sorted(path.glob("*.json"))
    else:
        files = [path]
    annotations = {}
    for file in files:
        if file.name.endswith(("manifest.json", ".feat.json")):
            continue
        record = load_annotations(file)
        annotations[record.video_id] = record
    if not annotations:
        raise CliError(EX_DATAERR, f"no annotation files under {path}")
    return annotations


def cmd_evaluate(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    predictions = _load_predictions(Path(args.pred))
    annotations = _load_gts(Path(args.gt))
    preds = {
        vid: [(s["class"], s["frame"], s["confidence"]) for s in payload["spots"]]
        for vid, payload in predictions.items()
    }
    gts = {vid: list(record.actions) for vid, record in annotations.items()}
    missing = set(gts) - set(preds)
    for vid in missing:
        preds[vid] = []
    report = build_report(
        preds, gts, cfg.tolerances, cfg.fps,
        num_classes=cfg.num_classes,
        window=args.window, ap_mode=args.ap_mode,
    )
    out = Path(args.out)
    out.write_text(json.dumps(report.to_dict(), indent=1))
    curves_path = out.with_name(out.stem + "_curves.csv")
    with open(curves_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["class", "tolerance", "precision", "recall", "f1", "tp", "fp", "fn"])
        for cls, info in report.per_class.items():
            for row in info["curves"]:
                writer.writerow([
                    cls, row["tolerance"], row["precision"], row["recall"],
                    row["f1"], row["tp"], row["fp"], row["fn"],
                ])
    write_manifest(
        out, "evaluate", args, started, [out, curves_path],
        config_hash=cfg.config_hash(),
        data_hash=_hash_inputs([Path(args.gt), Path(args.pred)]),
    )
    print(f"Average-mAP: {report.average_map:.4f} ({len(gts)} videos) -> {out}")
    return EX_OK


def cmd_highlights(args) -> int:
    started = time.time()
    predictions = _load_predictions(Path(args.model_output))
    annotations = _load_gts(Path(args.gt))
    etas = tuple(float(v) for v in args.etas.split(",")) if args.etas else ETA_GRID

    clips_by_video = {}
    curves_by_video = {}
    for vid, payload in predictions.items():
        if vid not in annotations:
            raise CliError(EX_DATAERR, f"no annotations for predicted video {vid}")
        record = annotations[vid]
        curves = np.asarray(payload["segmentation"], dtype=np.float64)
        curves_by_video[vid] = curves
        spots = [(s["class"], s["frame"], s["confidence"]) for s in payload["spots"]]
        segments = [
            (0, start, end, float(curves[start : end + 1, 0].max()))
            for start, end in detect_opportunity_segments(
                curves[:, 0], args.eta, record.class_actions(0)
            )
        ]
        fps = payload.get("fps", record.fps)
        reel = build_reel(spots, segments, fps, video_end_seconds=record.num_frames / fps)
        clips_by_video[vid] = [
            {
                "start_seconds": clip.start,
                "end_seconds": clip.end,
                "source": clip.source,
                "class": clip.class_index,
                "peak": clip.peak,
            }
            for clip in reel
        ]
    table = precision_vs_threshold(curves_by_video, annotations, etas=etas)
    payload = {
        "clips": clips_by_video,
        "precision_table": list(table.rows) if table.evaluable else None,
        "precision_status": "ok" if table.evaluable else f"not evaluable: {table.reason}",
    }
    out = Path(args.out)
    out.write_text(json.dumps(payload, indent=1))
    table_path = out.with_name(out.stem + "_precision.csv")
    with open(table_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["eta", "precision", "segments"])
        for row in table.rows:
            writer.writerow([row["eta"], row["precision"], row["segments"]])
    write_manifest(
        out, "highlights", args, started, [out, table_path],
        data_hash=_hash_inputs([Path(args.gt), Path(args.model_output)]),
    )
    n_clips = sum(len(v) for v in clips_by_video.values())
    print(f"{n_clips} clips; precision table: {payload['precision_status']} -> {out}")
    return EX_OK


def cmd_gradcheck(args) -> int:
    point = check_point_gradients(n_samples=args.samples, seed=args.seed or 0)
    print(
        f"pointwise loss derivative: {point.checked} samples, "
        f"worst relative error {point.worst_rel_err:.3e} "
        f"(tolerance {point.tolerance:.0e}) -> {'PASS' if point.passed else 'FAIL'}"
    )
    model = check_model_gradients()
    print(
        f"tiny network sweep: {model.checked} parameters, "
        f"worst relative error {model.worst_rel_err:.3e} "
        f"(tolerance {model.tolerance:.0e}) -> {'PASS' if model.passed else 'FAIL'}"
    )
    return EX_OK if point.passed and model.passed else EX_FAIL


def cmd_sweep(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    lambdas = [float(v) for v in args.lambdas.split(",")]
    data_dir = Path(args.data)
    train_videos = load_split(data_dir / "train")
    val_videos = load_split(data_dir / "val") if (data_dir / "val").is_dir() else []
    test_dir = data_dir / "test"
    test_videos = load_split(test_dir) if test_dir.is_dir() else val_videos
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .metrics import dataset_average_map

    rows = []
    for lam in lambdas:
        run_cfg = cfg.with_overrides(lambda_seg=lam)
        params, history = train(train_videos, val_videos, run_cfg)
        preds, gts = {}, {}
        for features, annotations in test_videos:
            spots, _ = predict_video(features, params, run_cfg)
            preds[annotations.video_id] = spots
            gts[annotations.video_id] = list(annotations.actions)
        _, avg = dataset_average_map(preds, gts, run_cfg.tolerances, run_cfg.fps)
        rows.append({"lambda_seg": lam, "average_map": avg})
        print(f"lambda_seg={lam}: Average-mAP {avg:.4f}")
    report_path = out / "sweep.json"
    report_path.write_text(json.dumps(rows, indent=1))
    with open(out / "sweep.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["lambda_seg", "average_map"])
        for row in rows:
            writer.writerow([row["lambda_seg"], row["average_map"]])
    write_manifest(
        out, "sweep", args, started, [report_path, out / "sweep.csv"],
        config_hash=cfg.config_hash(), data_hash=_hash_inputs([data_dir]),
    )
    return EX_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxspot",
        description="Context-aware temporal segmentation and action spotting workflows.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    p.add_argument("--spec", help="synthesis spec JSON (defaults apply when omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="dump the time-shift encoding of a video as CSV")
    p.add_argument("--annotations", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--dump-matchings", help="CSV of final-pass chunk matchings")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="spot actions in a feature file")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--config", help="defaults to config.json beside the model")
    p.add_argument("--out", required=True)
    p.add_argument("--confidence-threshold", type=float, default=None)
    p.add_argument("--dedup-window", type=float, default=None, help="seconds")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--gt", required=True, help="annotation file or directory")
    p.add_argument("--pred", required=True, help="prediction file or directory")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--window", choices=("half", "full"), default="half")
    p.add_argument("--ap-mode", choices=("all_points", "eleven_point"), default="all_points")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("highlights", help="build a highlight reel and precision table")
    p.add_argument("--model-output", required=True, help="predict output file or directory")
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eta", type=float, default=0.5, help="segment threshold for the reel")
    p.add_argument("--etas", help="comma-separated grid for the precision table")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_highlights)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train over a segmentation-weight grid")
    p.add_argument("--lambdas", required=True, help="comma-separated values")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    return parser


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; map unknown commands/flags to 64.
        return EX_USAGE if exc.code not in (0, None) else EX_OK
    if not getattr(args, "command", None):
        parser.print_help()
        return EX_USAGE
    try:
        return args.func(args)
    except CliError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return exc.code
    except (ConfigError, AnnotationError, FeatureFileError, CheckpointError) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return EX_DATAERR
    except DivergenceError as exc:
        _emit_error("DivergenceError", str(exc))
        return EX_SOFTWARE
    except FileNotFoundError as exc:
        _emit_error("FileNotFoundError", str(exc))
        return EX_IOERR
    except OSError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return EX_IOERR


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()

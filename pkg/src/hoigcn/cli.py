"""Command-line entry point: synth, mine-areas, build, train, eval, infer, grid."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from importlib import metadata
from pathlib import Path

from .errors import DivergenceError, HoiError
from .graph import (
    NUM_KEYPOINTS, GraphSpec, assemble_graph_sample, drop_area_nodes, read_dataset_jsonl, to_batch,
    write_dataset_jsonl,
)
from .models import GcnBlockConfig, GraphModel, ModelConfig, DEFAULT_BLOCKS
from .pose_data import (
    ACTION_NAMES, group_tracks, label_windows, make_windows, read_labels_csv, read_pose_file,
    split_dataset,
)
from .scene_mining import (
    DEFAULT_CELL, DEFAULT_EPS, DEFAULT_MIN_PTS, DEFAULT_THRESHOLD, Heatmap, areas_for, areas_to_json,
    mine_areas_by_video, read_areas_json, write_heatmap_csv,
)
from .synthgen import ScenarioConfig, generate_dataset, write_synthetic
from .training import (
    GRID_EPOCHS, EvalResult, GridConfig, TrainConfig, evaluate, fmt6, grid_to_csv, run_ablation_grid, train,
)

log = logging.getLogger("hoigcn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.0.0"


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _arch(text: str) -> str:
    arch = text.strip().lower().replace("-", "_").replace("+", "_")
    if arch not in ("gcn", "gcn_gru", "spgcn"):
        raise argparse.ArgumentTypeError(f"arch must be gcn, gcn-gru or spgcn, got {text!r}")
    return arch


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) <= 0:
        raise argparse.ArgumentTypeError("values must be positive")
    return values


def write_manifest(out_dir: Path, command: str, args: argparse.Namespace, started: float,
                   name: str = "manifest.json") -> None:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
             if k not in ("func", "command")}
    flags = {k: (list(v) if isinstance(v, tuple) else v) for k, v in flags.items()}
    doc = {"command": command, **flags, "version": _version(), "seed": getattr(args, "seed", None),
           "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
           "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())}
    (out_dir / name).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _out_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------- reports


def write_report(result: EvalResult, out_dir: str | Path, heatmap: Heatmap | None = None) -> list[Path]:
    """confusion.csv, group_confusion.csv (multi-task only), metrics.json and optionally heatmap.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "confusion.csv", out / "metrics.json"]
    (out / "confusion.csv").write_text(result.confusion.to_csv())
    metrics = {"accuracy": float(fmt6(result.accuracy)), "n": result.n}
    if result.group_confusion is not None:
        (out / "group_confusion.csv").write_text(result.group_confusion.to_csv())
        written.append(out / "group_confusion.csv")
        metrics["group_accuracy"] = float(fmt6(result.group_confusion.accuracy))
    (out / "metrics.json").write_text(json.dumps(metrics, sort_keys=True) + "\n")
    if heatmap is not None:
        with open(out / "heatmap.csv", "w") as fh:
            write_heatmap_csv(heatmap, fh)
        written.append(out / "heatmap.csv")
    return written


# --------------------------------------------------------------- commands


def cmd_synth(args) -> None:
    cfg = ScenarioConfig(num_areas=args.num_areas, samples_per_class=args.samples_per_class, seed=args.seed,
                         ambiguity=args.ambiguity, noise_px=args.noise_px, num_scenes=args.num_scenes)
    out = _out_dir(args.out)
    write_synthetic(generate_dataset(cfg), out)


def cmd_mine(args) -> None:
    frames = read_pose_file(args.poses)
    areas, heatmaps = mine_areas_by_video(frames, eps=args.eps, min_pts=args.min_pts, cell_size=args.cell,
                                          threshold_frac=args.threshold, side=args.side)
    out = _out_dir(args.out)
    (out / "areas.json").write_text(areas_to_json(areas) + "\n")
    maps = [h for h in heatmaps.values() if h is not None]
    if maps:
        total = Heatmap(maps[0].cell_size, maps[0].width, maps[0].height,
                        sum(h.grid for h in maps), sum(h.skipped for h in maps))
        with open(out / "heatmap.csv", "w") as fh:
            write_heatmap_csv(total, fh)
        per_video = _out_dir(out / "heatmaps")
        for video, h in heatmaps.items():
            if h is not None:
                with open(per_video / f"{video}.csv", "w") as fh:
                    write_heatmap_csv(h, fh)


def build_samples(poses: Path, labels: Path, areas_path: Path | None, with_objects: bool, link_mode: str):
    frames = read_pose_file(poses)
    intervals = read_labels_csv(labels)
    areas = read_areas_json(areas_path) if areas_path is not None else {}
    spec = GraphSpec.make(with_objects, link_mode)
    samples = []
    for track in group_tracks(frames).values():
        frame_size = (track[0].width, track[0].height)
        for w in label_windows(make_windows(track, frame_range=frame_size), intervals):
            samples.append(assemble_graph_sample(w, areas_for(areas, w.video_id), spec, frame_size))
    return samples


def cmd_build(args) -> None:
    if args.with_objects and args.areas is None:
        raise HoiError("--with-objects true needs --areas")
    samples = build_samples(args.poses, args.labels, args.areas, args.with_objects, args.link_mode)
    if not samples:
        raise HoiError("no labeled windows were found")
    out = _out_dir(args.out)
    with open(out / "dataset.jsonl", "w") as fh:
        write_dataset_jsonl(samples, fh)


def _load_dataset(path: Path, with_objects: bool):
    samples = read_dataset_jsonl(path)
    if not samples:
        raise HoiError(f"{path} holds no samples")
    has_objects = samples[0].nodes.shape[1] > NUM_KEYPOINTS
    if with_objects and not has_objects:
        raise HoiError("dataset has no area nodes; rebuild it with --with-objects true")
    if not with_objects and has_objects:
        samples = drop_area_nodes(samples)
    return samples


def _blocks(channels: tuple[int, ...]) -> tuple[GcnBlockConfig, ...]:
    if len(channels) != len(DEFAULT_BLOCKS):
        raise UsageError(f"--channels needs {len(DEFAULT_BLOCKS)} values")
    return tuple(GcnBlockConfig(c, b.stride, b.depth, b.temporal_kernel) for c, b in zip(channels, DEFAULT_BLOCKS))


def cmd_train(args) -> None:
    samples = _load_dataset(args.dataset, args.with_objects)
    split = split_dataset(samples, args.seed)
    mcfg = ModelConfig(arch=args.arch, blocks=_blocks(args.channels), gru_hidden=args.gru_hidden,
                       multi_task=args.loss == "multi", with_objects=args.with_objects, link_mode=args.link_mode,
                       dtype=args.dtype, seed=args.seed)
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, loss_mode=args.loss,
                       lambda_group=args.lambda_group, seed=args.seed, arch=args.arch,
                       with_objects=args.with_objects, balance=args.balance)
    model, curve = train(GraphModel(mcfg), split, tcfg)
    out = _out_dir(args.out)
    model.save(out / "model.json", extra={"split_seed": args.seed, "epochs": args.epochs, "loss": args.loss})
    (out / "losscurve.csv").write_text(curve.to_csv())


def _split_part(samples, part: str, seed: int):
    if part == "all":
        return samples
    split = split_dataset(samples, seed)
    return {"train": split.train, "val": split.val, "test": split.test}[part]


def cmd_eval(args) -> None:
    model = GraphModel.load(args.model)
    meta = json.loads(Path(args.model).read_text())["config"].get("train", {})
    seed = args.split_seed if args.split_seed is not None else meta.get("split_seed", 0)
    samples = _load_dataset(args.dataset, model.config.with_objects)
    result = evaluate(model, _split_part(samples, args.split, seed))
    write_report(result, _out_dir(args.out))


def cmd_infer(args) -> None:
    model = GraphModel.load(args.model)
    frames = read_pose_file(args.poses)
    areas = read_areas_json(args.areas) if args.areas is not None else {}
    if model.config.with_objects and args.areas is None:
        raise HoiError("this model uses area nodes; pass --areas")
    spec = model.config.graph_spec
    samples = []
    for track in group_tracks(frames).values():
        frame_size = (track[0].width, track[0].height)
        for w in make_windows(track, frame_range=frame_size):
            samples.append(assemble_graph_sample(w, areas_for(areas, w.video_id), spec, frame_size))
    out = _out_dir(args.out)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["video_id", "person_id", "start_frame", "action_label", "action_name"]
    writer.writerow(header + (["group_label"] if model.config.multi_task else []))
    if samples:
        labels, groups = model.predict(to_batch(samples, model.dtype))
        for k, s in enumerate(samples):
            video, person, start = s.id.rsplit("/", 2)
            row = [video, person, start, int(labels[k]), ACTION_NAMES[int(labels[k])]]
            writer.writerow(row + ([int(groups[k])] if groups is not None else []))
    (out / "predictions.csv").write_text(buf.getvalue())


def cmd_grid(args) -> None:
    data_dir = args.data_dir
    if (data_dir / "dataset.jsonl").exists():
        samples = read_dataset_jsonl(data_dir / "dataset.jsonl")
    else:
        samples = build_samples(data_dir / "poses.jsonl", data_dir / "labels.csv", data_dir / "areas.json",
                                True, args.link_mode)
    if not samples or samples[0].nodes.shape[1] == NUM_KEYPOINTS:
        raise HoiError("grid needs a dataset with area nodes")
    split = split_dataset(samples, args.seed)
    overrides = (("blocks", _blocks(args.channels)), ("gru_hidden", args.gru_hidden))
    cfg = GridConfig(seed=args.seed, epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                     lambda_group=args.lambda_group, balance=args.balance, dtype=args.dtype,
                     link_mode=args.link_mode, model_overrides=overrides)
    rows = run_ablation_grid(split, cfg, jobs=args.jobs,
                             on_row=lambda r: log.info("cell %d %s", r.cell.index, r.csv_fields()))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(grid_to_csv(rows))


# ----------------------------------------------------------------- parser


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lambda-group", type=float, default=1.0)
    p.add_argument("--link-mode", default="full_links", choices=("bones_only", "wrist_links", "full_links"))
    p.add_argument("--balance", type=_bool, default=False)
    p.add_argument("--dtype", default="float32", choices=("float32", "float64"))
    p.add_argument("--channels", type=_int_list, default=tuple(b.out_channels for b in DEFAULT_BLOCKS))
    p.add_argument("--gru-hidden", type=int, default=256)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hoigcn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--samples-per-class", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-areas", type=int, default=2)
    p.add_argument("--ambiguity", type=float, default=0.8)
    p.add_argument("--noise-px", type=float, default=1.0)
    p.add_argument("--num-scenes", type=int, default=8)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mine-areas", help="mine interaction areas from wrist positions")
    p.add_argument("--poses", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--min-pts", type=int, default=DEFAULT_MIN_PTS)
    p.add_argument("--cell", type=float, default=DEFAULT_CELL)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--side", default="right", choices=("right", "left", "both"))
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("build", help="assemble labeled graph samples")
    p.add_argument("--poses", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--areas", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--with-objects", type=_bool, default=True)
    p.add_argument("--link-mode", default="full_links", choices=("bones_only", "wrist_links", "full_links"))
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--arch", type=_arch, default="gcn_gru")
    p.add_argument("--loss", default="single", choices=("single", "multi"))
    p.add_argument("--with-objects", type=_bool, default=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--split-seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="label every window of a pose stream")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--poses", type=Path, required=True)
    p.add_argument("--areas", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("grid", help="run the full ablation grid")
    p.add_argument("--data-dir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--epochs", type=_int_list, default=GRID_EPOCHS)
    _train_flags(p)
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("hoigcn: error: a command is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        args.func(args)
    except UsageError as exc:
        print(f"hoigcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"hoigcn: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (HoiError, OSError, ValueError) as exc:
        print(f"hoigcn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    out = args.out
    manifest_dir = out.parent if args.command == "grid" else out
    write_manifest(manifest_dir, args.command, args, started,
                   name=f"{out.stem}.manifest.json" if args.command == "grid" else "manifest.json")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())

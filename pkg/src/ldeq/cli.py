"""Command-line experiment runner.

    ldeq gen         synthetic video dataset
    ldeq train       fit the toy model on synthetic stills
    ldeq infer       cold / rwr / relaxed inference over a dataset, plus a filter
    ldeq metrics     NME/NMF of a predicted track CSV against ground truth
    ldeq compare     RwR vs temporal filters on easy/hard subsets
    ldeq gradcheck   implicit vs unrolled vs finite-difference gradients
    ldeq solverbench solvers on seeded linear contractions

Exit status is 0 on success, 2 for configuration errors and 3 for runtime
errors; failures print one line ``error: <reason>`` to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, ExperimentConfig, FilterSection, load_config, parse_config
from .experiments import COMPARE_COLUMNS, compare, solver_bench
from .inference import infer_cold_video, infer_relaxed, infer_rwr
from .landmark_model import LandmarkDEQ, load_params
from .rng import SplitMix64
from .synth import gen_video, read_dataset, write_dataset
from .temporal_eval import (LandmarkTrack, TrackError, ema_filter, metrics_record,
                            one_euro_filter, read_tracks, savgol_filter, write_track)
from .training import GradCheckConfig, grad_check, train, write_loss_curve

EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("ldeq")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _checkpoint(cfg: ExperimentConfig, out: Path) -> Path:
    if cfg.paths.checkpoint:
        return Path(cfg.paths.checkpoint)
    return out / "model"


def _load_model(cfg: ExperimentConfig, out: Path):
    ck = _checkpoint(cfg, out)
    if not ck.with_suffix(".eqg").is_file() or not ck.with_suffix(".json").is_file():
        raise FileNotFoundError(f"missing checkpoint {ck}.eqg/.json")
    arch, theta = load_params(ck)
    return LandmarkDEQ(arch), theta


def apply_filter(track: LandmarkTrack, spec: FilterSection, fps: float) -> LandmarkTrack:
    if spec.kind == "ema":
        return ema_filter(track, spec.w)
    if spec.kind == "oneeuro":
        return one_euro_filter(track, spec.min_cutoff, spec.beta, spec.d_cutoff, fps)
    if spec.kind == "savgol":
        return savgol_filter(track, spec.window, spec.polyorder, spec.mode)
    return track


# -- subcommands -------------------------------------------------------------

def cmd_gen(cfg: ExperimentConfig, out: Path, args) -> dict:
    d = cfg.dataset
    scene = d.scene()
    seeds = SplitMix64(cfg.seed).child(7).next_u64(d.n_videos)
    videos = [gen_video(scene, d.n_frames, d.occlusion_window, int(s) & 0x7FFFFFFF,
                        video_id=f"v{i:04d}")
              for i, s in enumerate(seeds)]
    write_dataset(out, videos, scene)
    return {"videos": len(videos), "out": str(out)}


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> dict:
    ck = _checkpoint(cfg, out)
    ck.parent.mkdir(parents=True, exist_ok=True)
    result = train(cfg.train_config(checkpoint=str(ck)),
                   progress=lambda e, l: log.info("epoch %d loss %.6g", e, l))
    write_loss_curve(out / "loss.csv", result.loss_curve)
    return {"checkpoint": str(ck), "final_loss": result.loss_curve[-1],
            "skipped": sum(result.failures)}


def cmd_infer(cfg: ExperimentConfig, out: Path, args) -> dict:
    if not cfg.paths.dataset:
        raise ConfigError("paths.dataset: required for infer")
    model, theta = _load_model(cfg, out)
    videos = read_dataset(cfg.paths.dataset)
    rc = cfg.inference.build()
    tracks, rows = [], []
    for video in videos:
        if cfg.inference.mode == "cold":
            track, diags = infer_cold_video(model, theta, video.frames, rc.solver, video.video_id)
        elif cfg.inference.mode == "rwr":
            track, diags = infer_rwr(model, theta, video.frames, rc, video.video_id)
        else:
            track, diags = infer_relaxed(model, theta, video.frames, rc, video.video_id)
        tracks.append(apply_filter(track, cfg.filter, video.fps))
        rows += [(video.video_id, d) for d in diags]
    write_track(out / "pred.csv", tracks)
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "frame", "iters", "residual", "converged", "dist_prev"])
        for vid, d in rows:
            w.writerow([vid, d.frame, d.iters, f"{d.residual:.9g}", int(d.converged),
                        f"{d.dist_prev:.9g}"])
    return {"videos": len(videos), "mode": cfg.inference.mode, "filter": cfg.filter.kind}


def cmd_metrics(cfg: ExperimentConfig, out: Path, args) -> dict:
    preds = {t.video_id: t for t in read_tracks(args.pred)}
    gts = read_tracks(args.gt)
    spec = cfg.norm.build()
    records = []
    for gt in gts:
        if gt.video_id not in preds:
            raise TrackError(f"no prediction for video {gt.video_id!r}")
        records.append(metrics_record(preds[gt.video_id], gt, spec))
    summary = {
        "videos": records,
        "nme": sum(r["nme"] for r in records) / max(len(records), 1),
        "nmf": sum(r["nmf"] for r in records) / max(len(records), 1),
    }
    _write_json(out / "metrics.json", summary)
    return {"nme": summary["nme"], "nmf": summary["nmf"], "videos": len(records)}


def cmd_compare(cfg: ExperimentConfig, out: Path, args) -> dict:
    model, theta = _load_model(cfg, out)
    rows = compare(model, theta, cfg.dataset.scene(), cfg.compare_config(), workers=args.workers)
    _write_json(out / "compare.json", {"step_cap": cfg.inference.step_cap, "rows": rows})
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in r.items()})
    return {"rows": len(rows), "out": str(out / "compare.csv")}


def cmd_gradcheck(cfg: ExperimentConfig, out: Path, args) -> dict:
    reports = [grad_check(GradCheckConfig(seed=cfg.seed + k)) for k in range(args.seeds)]
    _write_json(out / "gradcheck.json", reports)
    return {"max_rel_err": max(r["max_rel_err"] for r in reports), "seeds": len(reports)}


def cmd_solverbench(cfg: ExperimentConfig, out: Path, args) -> dict:
    rows = solver_bench(seeds=range(cfg.seed, cfg.seed + args.seeds))
    _write_json(out / "solverbench.json", rows)
    return {"rows": len(rows), "max_abs_err": max(r["max_abs_err"] for r in rows)}


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "infer": cmd_infer, "metrics": cmd_metrics,
    "compare": cmd_compare, "gradcheck": cmd_gradcheck, "solverbench": cmd_solverbench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--workers", type=int, default=1, help="parallel videos (compare)")
    common.add_argument("--out", help="output directory (overrides config 'out')")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="ldeq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "metrics":
            p.add_argument("pred", help="predicted track CSV")
            p.add_argument("gt", help="ground-truth track CSV")
        if name in ("gradcheck", "solverbench"):
            p.add_argument("--seeds", type=int, default=5 if name == "gradcheck" else 10)
    return parser


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else parse_config({})
    patch = {}
    if args.seed is not None:
        patch["seed"] = args.seed
    if args.out is not None:
        patch["out"] = args.out
    if patch:
        cfg = parse_config({**cfg.model_dump(), **patch})
    if args.workers < 1:
        raise ConfigError("workers: must be >= 1")
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - single-line reason for any runtime failure
        reason = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {args.command}: {reason}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"command": args.command, **summary}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())

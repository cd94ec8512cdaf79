"""Benchmarks shared by the command line and the acceptance suite: the
RwR-vs-filters comparison on easy/hard synthetic subsets, and the solver
benchmark on seeded linear contractions."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .inference import RwrConfig, infer_cold_video, infer_rwr
from .landmark_model import LandmarkDEQ
from .numgrid import ParamVector
from .rng import SplitMix64
from .solvers import SolverConfig, solve
from .synth import FAST_SPEED, SceneSpec, VideoSequence, gen_video
from .temporal_eval import (NormSpec, ema_filter, nme, nmf, one_euro_filter,
                            savgol_filter)

COMPARE_COLUMNS = ("method", "subset", "nme", "nmf", "mean_iters")
# Scene overrides and RNG stream tag per benchmark subset.  "fast" is the
# hard subset at the fast-motion speed, used for the filter-lag check.
SUBSETS = {
    "easy": ({"ambiguity_prob": 0.0}, 1),
    "hard": ({"ambiguity_prob": 0.8}, 2),
    "fast": ({"ambiguity_prob": 0.8, "speed": FAST_SPEED}, 3),
}


@dataclass(frozen=True)
class CompareConfig:
    n_videos: int = 50
    n_frames: int = 40
    occlusion_window: tuple[int, int] = (10, 30)
    ema_ws: tuple[float, ...] = (0.9, 0.5, 0.15, 0.05)
    oneeuro: dict = field(default_factory=lambda: {"min_cutoff": 1.0, "beta": 0.0, "d_cutoff": 1.0})
    savgol: dict = field(default_factory=lambda: {"window": 5, "polyorder": 2})
    rwr: RwrConfig = field(default_factory=RwrConfig)
    subsets: tuple[str, ...] = ("easy", "hard")
    norm: NormSpec = field(default_factory=NormSpec)
    seed: int = 0


def make_subset(scene: SceneSpec, name: str, cfg: CompareConfig) -> list[VideoSequence]:
    """Seeded videos for one subset; the subset's overrides replace ``scene`` fields."""
    if name not in SUBSETS:
        raise ValueError(f"unknown subset {name!r}")
    overrides, tag = SUBSETS[name]
    spec = replace(scene, **overrides)
    seeds = SplitMix64(cfg.seed).child(tag).next_u64(cfg.n_videos)
    return [gen_video(spec, cfg.n_frames, cfg.occlusion_window, int(s) & 0x7FFFFFFF,
                      video_id=f"{name}{v:03d}")
            for v, s in enumerate(seeds)]


def method_names(cfg: CompareConfig) -> list[str]:
    ws = sorted(cfg.ema_ws, reverse=True)
    return ["cold", *[f"ema{w:g}" for w in ws], "oneeuro", "savgol", "rwr"]


def _video_tracks(args):
    model, theta, video, cfg = args
    cold, cdiag = infer_cold_video(model, theta, video.frames, cfg.rwr.solver, video.video_id)
    rwr, rdiag = infer_rwr(model, theta, video.frames, cfg.rwr, video.video_id)
    cold_iters = float(np.mean([d.iters for d in cdiag]))
    out = {"cold": (cold, cold_iters)}
    for w in cfg.ema_ws:
        out[f"ema{w:g}"] = (ema_filter(cold, w), cold_iters)
    out["oneeuro"] = (one_euro_filter(cold, fps=video.fps, **cfg.oneeuro), cold_iters)
    out["savgol"] = (savgol_filter(cold, **cfg.savgol), cold_iters)
    out["rwr"] = (rwr, float(np.mean([d.iters for d in rdiag])))
    return out


def evaluate_videos(model: LandmarkDEQ, theta: ParamVector, videos: Sequence[VideoSequence],
                    cfg: CompareConfig, workers: int = 1) -> list[dict]:
    """Per-video tracks for every method, in input order."""
    jobs = [(model, theta, v, cfg) for v in videos]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_video_tracks, jobs))
    return [_video_tracks(j) for j in jobs]


def summarize(videos: Sequence[VideoSequence], tracks: Sequence[dict], subset: str,
              cfg: CompareConfig) -> list[dict]:
    """One row per method; NME/NMF are means of the per-video aggregates."""
    rows = []
    for name in method_names(cfg):
        e, f, it = [], [], []
        for video, per in zip(videos, tracks):
            pred, iters = per[name]
            e.append(nme(pred, video.gt, cfg.norm)[1])
            f.append(nmf(pred, video.gt, cfg.norm)[1])
            it.append(iters)
        rows.append({"method": name, "subset": subset, "nme": float(np.mean(e)),
                     "nmf": float(np.mean(f)), "mean_iters": float(np.mean(it))})
    return rows


def compare(model: LandmarkDEQ, theta: ParamVector, scene: SceneSpec, cfg: CompareConfig,
            workers: int = 1) -> list[dict]:
    rows = []
    for subset in cfg.subsets:
        videos = make_subset(scene, subset, cfg)
        rows += summarize(videos, evaluate_videos(model, theta, videos, cfg, workers), subset, cfg)
    return rows


def row_lookup(rows: Sequence[dict]) -> dict:
    return {(r["method"], r["subset"]): r for r in rows}


# -- solver benchmark -----------------------------------------------------------

def linear_contraction(seed: int, dim: int = 16, radius: float = 0.5):
    """Affine map z -> A z + b with spectral radius ``radius``, and its exact fixed point."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(dim, dim))
    A *= radius / max(abs(np.linalg.eigvals(A)))
    b = rng.normal(size=dim)
    z_exact = np.linalg.solve(np.eye(dim) - A, b)
    return A, b, z_exact


def solver_bench(seeds: Sequence[int] = range(10), dim: int = 16, radius: float = 0.5,
                 tol: float = 1e-10, max_iters: int = 500,
                 methods: Sequence[str] = ("fpi", "anderson", "broyden")) -> list[dict]:
    rows = []
    for seed in seeds:
        A, b, z_exact = linear_contraction(seed, dim, radius)
        for m in methods:
            cfg = SolverConfig(method=m, tol=tol, max_iters=max_iters)
            res = solve(lambda z: A @ z + b, np.zeros(dim), cfg)
            rows.append({"seed": int(seed), "method": m, "iters": res.iters,
                         "converged": res.converged, "residual": res.residual,
                         "max_abs_err": float(np.max(np.abs(res.z_star - z_exact)))})
    return rows

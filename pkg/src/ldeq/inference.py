"""Video inference: per-frame cold starts, warm-started early-stopped solving
(recurrence without recurrence), and a direct minimiser of the relaxed
objective ``|f(z) - z|^2 + alpha/2 |z - z_prev|^2``."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .deqcore import deq_forward
from .solvers import DivergenceError, SolverConfig, SolverError
from .temporal_eval import LandmarkTrack

ARMIJO = 1e-4


@dataclass(frozen=True)
class RwrConfig:
    """``step_cap`` of None means no cap (solve each frame to tolerance)."""

    step_cap: Optional[int] = 2
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(method="fpi", tol=1e-4, max_iters=100))
    alpha: float = 1.0
    relaxed_steps: int = 200
    relaxed_lr: float = 1.0

    def __post_init__(self):
        if self.step_cap is not None and self.step_cap < 1:
            raise ValueError("step_cap must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.relaxed_steps < 1 or not self.relaxed_lr > 0:
            raise ValueError("relaxed_steps and relaxed_lr must be positive")


class VideoAbort(SolverError):
    def __init__(self, frame: int, cause: Exception):
        super().__init__(f"frame {frame}: {cause}")
        self.frame = frame


@dataclass
class FrameDiag:
    frame: int
    iters: int
    residual: float
    converged: bool
    dist_prev: float


def _prepared(model, frame, theta):
    prep = getattr(model, "prepare", None)
    return prep(frame, theta) if prep is not None else frame


def infer_cold(model, theta, frame, cfg: SolverConfig):
    """Solve from the zero state; returns (z, landmarks, SolverResult)."""
    x = _prepared(model, frame, theta)
    res = deq_forward(model, x, theta, cfg)
    return res.z_star, model.decode(res.z_star), res


def _norm(a) -> float:
    return float(np.linalg.norm(np.ravel(a)))


def infer_rwr(model, theta, frames: Sequence, cfg: RwrConfig, video_id: str = "",
              keep_states: bool = False):
    """Frame 1 from zeros, frame n > 1 from frame n-1's state with at most
    ``step_cap`` iterations.  Returns (track, diagnostics[, states])."""
    if len(frames) == 0:
        raise ValueError("infer_rwr needs at least one frame")
    pts, diags, states = [], [], []
    z_prev = None
    for n, frame in enumerate(frames):
        try:
            if z_prev is None:
                z, p, res = infer_cold(model, theta, frame, cfg.solver)
                dist = 0.0
            else:
                x = _prepared(model, frame, theta)
                capped = cfg.solver if cfg.step_cap is None else cfg.solver.replace(
                    max_iters=cfg.step_cap, anderson_window=min(cfg.solver.anderson_window, cfg.step_cap))
                res = deq_forward(model, x, theta, capped, z0=z_prev)
                z = res.z_star
                p = model.decode(z)
                dist = _norm(z - z_prev)
        except DivergenceError as exc:
            raise VideoAbort(n, exc) from exc
        pts.append(p)
        diags.append(FrameDiag(n, res.iters, res.residual, res.converged, dist))
        if keep_states:
            states.append(z)
        z_prev = z
    track = LandmarkTrack(video_id, np.stack(pts))
    return (track, diags, states) if keep_states else (track, diags)


def infer_cold_video(model, theta, frames: Sequence, cfg: SolverConfig, video_id: str = "",
                     keep_states: bool = False):
    pts, diags, states = [], [], []
    prev = None
    for n, frame in enumerate(frames):
        try:
            z, p, res = infer_cold(model, theta, frame, cfg)
        except DivergenceError as exc:
            raise VideoAbort(n, exc) from exc
        pts.append(p)
        diags.append(FrameDiag(n, res.iters, res.residual, res.converged,
                               0.0 if prev is None else _norm(z - prev)))
        if keep_states:
            states.append(z)
        prev = z
    track = LandmarkTrack(video_id, np.stack(pts))
    return (track, diags, states) if keep_states else (track, diags)


@dataclass
class RelaxedResult:
    z: np.ndarray
    objective: list[float]
    steps: int


def solve_relaxed(model, theta, frame, z_prev, cfg: RwrConfig, z_init=None) -> RelaxedResult:
    """Gradient descent with backtracking on the relaxed warm-start objective.

    The gradient of the residual term is ``2 (vjp_z(z, r) - r)`` with
    ``r = f(z) - z``.  Each step starts at ``relaxed_lr`` and halves until
    the Armijo condition holds, so the objective trace never increases.
    """
    x = _prepared(model, frame, theta)
    z_prev = np.asarray(z_prev, dtype=np.float64)
    alpha = cfg.alpha

    def objective(z):
        r = model.forward(z, x, theta) - z
        d = z - z_prev
        val = float(np.vdot(r, r)) + 0.5 * alpha * float(np.vdot(d, d))
        if not np.isfinite(val):
            raise DivergenceError(len(trace), "non-finite relaxed objective")
        return val, r

    z = (z_prev if z_init is None else np.asarray(z_init, dtype=np.float64)).copy()
    trace: list[float] = []
    val, r = objective(z)
    trace.append(val)
    steps = 0
    for steps in range(1, cfg.relaxed_steps + 1):
        grad = 2.0 * (model.vjp_z(z, x, theta, r) - r) + alpha * (z - z_prev)
        gg = float(np.vdot(grad, grad))
        if gg <= 1e-30:
            steps -= 1
            break
        lr = cfg.relaxed_lr
        while True:
            z_try = z - lr * grad
            val_try, r_try = objective(z_try)
            if val_try <= val - ARMIJO * lr * gg:
                break
            lr *= 0.5
            if lr < 1e-20:
                return RelaxedResult(z, trace, steps - 1)
        z, val, r = z_try, val_try, r_try
        trace.append(val)
    return RelaxedResult(z, trace, steps)


def infer_relaxed(model, theta, frames: Sequence, cfg: RwrConfig, video_id: str = "",
                  keep_states: bool = False):
    """Frame 1 cold, frame n > 1 by :func:`solve_relaxed` around frame n-1's state."""
    if len(frames) == 0:
        raise ValueError("infer_relaxed needs at least one frame")
    pts, diags, states = [], [], []
    z_prev = None
    for n, frame in enumerate(frames):
        try:
            if z_prev is None:
                z, p, res = infer_cold(model, theta, frame, cfg.solver)
                diag = FrameDiag(n, res.iters, res.residual, res.converged, 0.0)
            else:
                rel = solve_relaxed(model, theta, frame, z_prev, cfg)
                z = rel.z
                p = model.decode(z)
                fz = model.forward(z, _prepared(model, frame, theta), theta)
                res_n = _norm(fz - z) / max(_norm(z), 1e-8)
                diag = FrameDiag(n, rel.steps, res_n, res_n <= cfg.solver.tol, _norm(z - z_prev))
        except DivergenceError as exc:
            raise VideoAbort(n, exc) from exc
        pts.append(p)
        diags.append(diag)
        if keep_states:
            states.append(z)
        z_prev = z
    track = LandmarkTrack(video_id, np.stack(pts))
    return (track, diags, states) if keep_states else (track, diags)


def write_diagnostics(path, video_id: str, diags: Sequence[FrameDiag]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "frame", "iters", "residual", "converged", "dist_prev"])
        for d in diags:
            w.writerow([video_id, d.frame, d.iters, f"{d.residual:.9g}", int(d.converged),
                        f"{d.dist_prev:.9g}"])

"""End-to-end training of the landmark DEQ on synthetic stills, and the
three-way gradient check used to validate the implicit backward pass."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .deqcore import (BackwardDivergenceError, EquilibriumQualityWarning, deq_backward,
                      deq_forward, finite_diff_grad, unrolled_backward)
from .landmark_model import (ArchDescriptor, LandmarkDEQ, mse_loss, save_params, softargmax,
                             softargmax_vjp)
from .numgrid import ParamVector
from .rng import SplitMix64
from .solvers import DivergenceError, SolverConfig
from .synth import SceneSpec, gen_stills
from .temporal_eval import LandmarkTrack, NormSpec, nme

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.10
FD_TOL = 1e-12


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 3e-3
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    n_train: int = 256
    n_holdout: int = 64
    arch: ArchDescriptor = field(default_factory=ArchDescriptor)
    scene: SceneSpec = field(default_factory=lambda: SceneSpec(ambiguity_prob=0.5))
    solver: SolverConfig = field(
        default_factory=lambda: SolverConfig(method="anderson", tol=1e-4, max_iters=50))
    backward_solver: SolverConfig = field(
        default_factory=lambda: SolverConfig(method="anderson", tol=1e-4, max_iters=100))
    checkpoint: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.arch.num_landmarks != self.scene.num_landmarks:
            raise ValueError("arch and scene disagree on num_landmarks")
        if self.arch.image_size != self.scene.image_size:
            raise ValueError("arch and scene disagree on image_size")


@dataclass
class TrainResult:
    theta: ParamVector
    loss_curve: list[float]
    failures: list[int]
    # Largest number of floats carried from forward into backward (z*) plus
    # the backward solver's workspace, over all steps.
    retained_floats: int = 0


class Adam:
    def __init__(self, size: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def example_loss_and_grad(model: LandmarkDEQ, theta: ParamVector, image, label,
                          solver: SolverConfig, backward: SolverConfig,
                          info: Optional[dict] = None):
    """Forward solve, landmark MSE and its implicit gradient for one still."""
    x = model.prepare(image, theta)
    res = deq_forward(model, x, theta, solver)
    pred = softargmax(res.z_star)
    loss, g_pred = mse_loss(pred, label)
    dL_dz = softargmax_vjp(res.z_star, g_pred)
    bw: dict = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EquilibriumQualityWarning)
        grad = deq_backward(model, x, theta, res.z_star, dL_dz, backward, info=bw)
    if info is not None:
        info.update(forward=res, backward=bw,
                    retained=res.z_star.size + bw.get("peak_floats", 0))
    return loss, grad


def _order(rng: SplitMix64, n: int) -> np.ndarray:
    return np.argsort(rng.uniform(n), kind="stable")


def train(config: TrainConfig, data=None, theta0: Optional[ParamVector] = None,
          progress=None) -> TrainResult:
    """Adam on the landmark MSE, one still per step, seeded shuffling.

    ``data`` defaults to ``config.n_train`` stills generated from
    ``config.scene``; it is never modified.
    """
    model = LandmarkDEQ(config.arch)
    theta = theta0 if theta0 is not None else model.init_params(config.seed)
    if data is None:
        data = gen_stills(config.scene, config.n_train, config.seed + 1)
    opt = Adam(len(theta), config.lr, config.betas, config.adam_eps)
    order_rng = SplitMix64(config.seed).child(99)
    curve, failures = [], []
    retained = 0
    for epoch in range(config.epochs):
        losses, failed = [], 0
        for i in _order(order_rng, len(data)):
            image, label, _ = data[i]
            info: dict = {}
            try:
                loss, grad = example_loss_and_grad(model, theta, image, label, config.solver,
                                                   config.backward_solver, info)
            except (DivergenceError, BackwardDivergenceError) as exc:
                failed += 1
                log.warning("epoch %d example %d skipped: %s", epoch, i, exc)
                continue
            retained = max(retained, info["retained"])
            losses.append(loss)
            if config.lr > 0:
                theta = theta.like(opt.step(theta.data, grad.data))
        failures.append(failed)
        if failed > MAX_FAILURE_FRACTION * len(data):
            raise TrainingAborted(
                f"epoch {epoch}: solver failed on {failed}/{len(data)} examples")
        curve.append(float(np.mean(losses)))
        log.info("epoch %d loss %.6g failures %d", epoch, curve[-1], failed)
        if progress is not None:
            progress(epoch, curve[-1])
    if config.checkpoint:
        save_params(config.checkpoint, config.arch, theta)
    return TrainResult(theta, curve, failures, retained)


def holdout_stills(config: TrainConfig):
    """Unambiguous stills disjoint from the training seeds, for held-out NME."""
    return gen_stills(replace(config.scene, ambiguity_prob=0.0), config.n_holdout,
                      config.seed + 2)


def write_loss_curve(path, curve) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(curve):
            fh.write(f"{i},{v:.9g}\n")


def stills_nme(model: LandmarkDEQ, theta: ParamVector, stills, solver: SolverConfig,
               spec: NormSpec = NormSpec()) -> float:
    """Mean NME (percent) over stills, each treated as a one-frame track."""
    vals = []
    for image, label, _ in stills:
        res = deq_forward(model, model.prepare(image, theta), theta, solver)
        pred = softargmax(res.z_star)
        _, agg = nme(LandmarkTrack("", pred[None]), LandmarkTrack("", label[None]), spec)
        vals.append(agg)
    return float(np.mean(vals))


# -- gradient check ------------------------------------------------------------

@dataclass(frozen=True)
class GradCheckConfig:
    seed: int = 0
    arch: ArchDescriptor = field(default_factory=lambda: ArchDescriptor(
        image_size=16, heatmap_size=8, num_landmarks=2, feature_channels=4))
    tol: float = 1e-10
    eps: float = 1e-5
    max_iters: int = 500
    method: str = "fpi"
    unrolled_steps: int = 0  # 0: pick enough steps to converge
    zero_loss: bool = False


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-30))


def grad_check(config: GradCheckConfig = GradCheckConfig()) -> dict:
    """Compare implicit, unrolled and finite-difference gradients."""
    arch = config.arch
    model = LandmarkDEQ(arch)
    theta = model.init_params(config.seed)
    scene = SceneSpec(num_landmarks=arch.num_landmarks, image_size=arch.image_size,
                      blob_sigma=0.8, noise_sigma=0.05)
    image, label, _ = gen_stills(scene, 1, config.seed)[0]
    cfg = SolverConfig(method=config.method, tol=config.tol, max_iters=config.max_iters,
                       anderson_window=min(5, config.max_iters))
    x = model.prepare(image, theta)
    res = deq_forward(model, x, theta, cfg)
    if config.zero_loss:
        label = softargmax(res.z_star)

    def dL_dz_fn(z):
        _, g = mse_loss(softargmax(z), label)
        return softargmax_vjp(z, g)

    # The finite-difference oracle always solves tightly, whatever tol is under test.
    fd_cfg = cfg.replace(tol=min(config.tol, FD_TOL), max_iters=max(config.max_iters, 500),
                         anderson_window=min(5, max(config.max_iters, 500)))

    def loss_of(th):
        # warm start at the unperturbed equilibrium; f is a contraction here
        r = deq_forward(model, model.prepare(image, th), th, fd_cfg, z0=res.z_star)
        return mse_loss(softargmax(r.z_star), label)[0]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EquilibriumQualityWarning)
        g_ift = deq_backward(model, x, theta, res.z_star, dL_dz_fn(res.z_star), cfg)
    steps = config.unrolled_steps or max(res.iters + 20, 60)
    g_unr, _ = unrolled_backward(model, x, theta, model.init_state(), steps, dL_dz_fn)
    g_fd = finite_diff_grad(loss_of, theta, config.eps)
    a, b, c = g_ift.data, g_unr.data, g_fd.data
    return {
        "seed": config.seed,
        "tol": config.tol,
        "eps": config.eps,
        "forward_iters": res.iters,
        "forward_residual": res.residual,
        "n_params": len(theta),
        "ift_vs_unrolled": rel_err(a, b),
        "ift_vs_fd": rel_err(a, c),
        "unrolled_vs_fd": rel_err(b, c),
        "max_rel_err": max(rel_err(a, b), rel_err(a, c), rel_err(b, c)),
        "max_abs_grad": float(max(np.abs(a).max(), np.abs(b).max(), np.abs(c).max())),
    }

"""Experiment configuration: a YAML file parsed strictly (unknown keys are
errors) into pydantic models, then turned into the library's dataclasses."""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .experiments import CompareConfig
from .inference import RwrConfig
from .landmark_model import ArchDescriptor
from .solvers import SolverConfig
from .synth import SceneSpec
from .temporal_eval import NormSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SolverSection(_Strict):
    method: Literal["fpi", "anderson", "broyden"] = "fpi"
    tol: float = Field(1e-4, gt=0)
    max_iters: int = Field(100, ge=1)
    anderson_window: int = Field(5, ge=1)
    anderson_damping: float = Field(1.0, gt=0, le=1)
    anderson_reg: float = Field(1e-4, ge=0)

    def build(self) -> SolverConfig:
        return SolverConfig(**self.model_dump())


class DatasetSection(_Strict):
    num_landmarks: int = Field(4, ge=1)
    blob_sigma: float = Field(1.0, gt=0)
    ambiguity_prob: float = Field(0.8, ge=0, le=1)
    ambiguity_offset: float = Field(0.1, ge=0, le=0.5)
    ambiguity_contrast: float = Field(0.2, ge=0, lt=2)
    noise_sigma: float = Field(0.05, ge=0)
    image_size: int = Field(32, ge=4)
    speed: float = Field(1.0, gt=0)
    n_videos: int = Field(10, ge=0)
    n_frames: int = Field(40, ge=1)
    occlusion_window: Optional[tuple[int, int]] = (10, 30)

    def scene(self, **override) -> SceneSpec:
        d = self.model_dump(exclude={"n_videos", "n_frames", "occlusion_window"})
        return SceneSpec(**{**d, **override})


class ModelSection(_Strict):
    heatmap_size: int = Field(16, ge=1)
    feature_channels: int = Field(8, ge=1)
    temperature: float = Field(2.5, gt=0)


class TrainSection(_Strict):
    epochs: int = Field(30, ge=1)
    lr: float = Field(3e-3, gt=0)
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(1e-8, gt=0)
    n_train: int = Field(256, ge=1)
    ambiguity_prob: float = Field(0.5, ge=0, le=1)
    solver: SolverSection = SolverSection(method="anderson", tol=1e-4, max_iters=50)
    backward_solver: SolverSection = SolverSection(method="anderson", tol=1e-4, max_iters=100)


class InferenceSection(_Strict):
    mode: Literal["cold", "rwr", "relaxed"] = "rwr"
    step_cap: Optional[int] = Field(2, ge=1)
    solver: SolverSection = SolverSection()
    alpha: float = Field(1.0, ge=0)
    relaxed_steps: int = Field(200, ge=1)
    relaxed_lr: float = Field(1.0, gt=0)

    def build(self) -> RwrConfig:
        return RwrConfig(step_cap=self.step_cap, solver=self.solver.build(), alpha=self.alpha,
                         relaxed_steps=self.relaxed_steps, relaxed_lr=self.relaxed_lr)


class FilterSection(_Strict):
    kind: Literal["none", "ema", "oneeuro", "savgol"] = "none"
    w: float = Field(0.5, gt=0, le=1)
    min_cutoff: float = Field(1.0, gt=0)
    beta: float = Field(0.0, ge=0)
    d_cutoff: float = Field(1.0, gt=0)
    window: int = Field(5, ge=1)
    polyorder: int = Field(2, ge=0)
    mode: Literal["mirror", "interp"] = "mirror"


class NormSection(_Strict):
    d0_pair: tuple[int, int] = (0, 1)
    d0_value: Optional[float] = Field(None, gt=0)
    face_area: Optional[float] = Field(None, gt=0)

    def build(self) -> NormSpec:
        return NormSpec(self.d0_pair, self.d0_value, self.face_area)


class CompareSection(_Strict):
    n_videos: int = Field(50, ge=1)
    n_frames: int = Field(40, ge=2)
    occlusion_window: tuple[int, int] = (10, 30)
    ema_ws: tuple[float, ...] = (0.9, 0.5, 0.15, 0.05)
    oneeuro: FilterSection = FilterSection(kind="oneeuro")
    savgol: FilterSection = FilterSection(kind="savgol")
    subsets: tuple[Literal["easy", "hard", "fast"], ...] = ("easy", "hard")


class PathsSection(_Strict):
    dataset: Optional[str] = None
    checkpoint: Optional[str] = None


class ExperimentConfig(_Strict):
    seed: int = Field(0, ge=0)
    out: str = "runs/default"
    dataset: DatasetSection = DatasetSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    inference: InferenceSection = InferenceSection()
    filter: FilterSection = FilterSection()
    norm: NormSection = NormSection()
    compare: CompareSection = CompareSection()
    paths: PathsSection = PathsSection()

    # -- conversions into library types --------------------------------------

    def arch(self) -> ArchDescriptor:
        return ArchDescriptor(image_size=self.dataset.image_size,
                              heatmap_size=self.model.heatmap_size,
                              num_landmarks=self.dataset.num_landmarks,
                              feature_channels=self.model.feature_channels,
                              temperature=self.model.temperature)

    def train_config(self, checkpoint: Optional[str] = None) -> TrainConfig:
        t = self.train
        return TrainConfig(epochs=t.epochs, lr=t.lr, betas=t.betas, adam_eps=t.adam_eps,
                           seed=self.seed, n_train=t.n_train, arch=self.arch(),
                           scene=self.dataset.scene(ambiguity_prob=t.ambiguity_prob),
                           solver=t.solver.build(), backward_solver=t.backward_solver.build(),
                           checkpoint=checkpoint)

    def compare_config(self) -> CompareConfig:
        c = self.compare
        return CompareConfig(
            n_videos=c.n_videos, n_frames=c.n_frames, occlusion_window=c.occlusion_window,
            ema_ws=c.ema_ws,
            oneeuro={"min_cutoff": c.oneeuro.min_cutoff, "beta": c.oneeuro.beta,
                     "d_cutoff": c.oneeuro.d_cutoff},
            savgol={"window": c.savgol.window, "polyorder": c.savgol.polyorder,
                    "mode": c.savgol.mode},
            rwr=self.inference.build(), subsets=c.subsets, norm=self.norm.build(), seed=self.seed)


def _describe(err: ValidationError) -> str:
    first = err.errors()[0]
    key = ".".join(str(p) for p in first["loc"]) or "<root>"
    return f"{key}: {first['msg']}"


def parse_config(data: Optional[dict]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {str(exc).splitlines()[0]}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return parse_config(data)

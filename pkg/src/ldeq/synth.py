"""Seeded synthetic landmark images and videos with two-mode ambiguity.

Each landmark is drawn as an isotropic Gaussian blob with its own signed
amplitude (+1, -1, +0.5, -0.5, ...), so a single-channel image still tells
landmarks apart.  An *ambiguous* landmark loses its blob; in its place two
decoys appear at ``position +/- ambiguity_offset`` along x, the two plausible
hypotheses, one slightly brighter than the other (fair coin per still or per
video frame).  Stills label an ambiguous landmark with the brighter mode;
videos keep the smooth trajectory between the modes as ground truth, so a
frame-wise detector that follows the brighter decoy flickers.

Every random draw comes from :class:`~ldeq.rng.SplitMix64` sub-streams keyed
by purpose, so output bytes depend only on (spec, seed).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .numgrid import read_grid, write_grid
from .rng import SplitMix64
from .temporal_eval import LandmarkTrack, read_tracks, write_track

FPS = 25.0
TEMPLATE_RADIUS = 0.22
STILL_SHIFT = 0.08
STILL_JITTER = 0.06
VIDEO_SHIFT = 0.05
GLOBAL_AMP = 0.06
GLOBAL_PERIOD = (160.0, 240.0)
LOCAL_AMP = 0.02
LOCAL_PERIOD = (120.0, 200.0)
# Motion speed of the fast-motion benchmark (periods divided by 4).
FAST_SPEED = 4.0


def v_max(speed: float = 1.0) -> float:
    """Upper bound on per-frame landmark displacement at a given motion speed."""
    return speed * math.sqrt(2) * 2 * math.pi * (
        GLOBAL_AMP / GLOBAL_PERIOD[0] + LOCAL_AMP / LOCAL_PERIOD[0])

# stream tags
_LAYOUT, _AMBIG, _NOISE, _MOTION, _LABEL = 1, 2, 3, 4, 5


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    num_landmarks: int = 4
    blob_sigma: float = 1.0
    ambiguity_prob: float = 0.0
    ambiguity_offset: float = 0.1
    noise_sigma: float = 0.05
    image_size: int = 32
    # Relative brightness gap between the two decoys of an ambiguous landmark.
    ambiguity_contrast: float = 0.2
    # Multiplies every motion frequency; per-frame displacement scales with it.
    speed: float = 1.0
    # Landmarks that may become ambiguous; default is the last one.
    ambiguous_landmarks: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.num_landmarks < 1:
            raise SynthError("num_landmarks must be >= 1")
        if not self.blob_sigma > 0:
            raise SynthError("blob_sigma must be positive")
        if not 0 <= self.ambiguity_prob <= 1:
            raise SynthError("ambiguity_prob must be in [0, 1]")
        if not 0 <= self.ambiguity_offset <= 0.5:
            raise SynthError("ambiguity_offset must be in [0, 0.5]")
        if self.noise_sigma < 0:
            raise SynthError("noise_sigma must be non-negative")
        if not 0 <= self.ambiguity_contrast < 2:
            raise SynthError("ambiguity_contrast must be in [0, 2)")
        if not self.speed > 0:
            raise SynthError("speed must be positive")
        if self.image_size < 4:
            raise SynthError("image_size must be >= 4")
        for l in self.designated:
            if not 0 <= l < self.num_landmarks:
                raise SynthError(f"ambiguous landmark {l} out of range")

    @property
    def designated(self) -> tuple[int, ...]:
        if self.ambiguous_landmarks is None:
            return (self.num_landmarks - 1,)
        return tuple(self.ambiguous_landmarks)


@dataclass
class VideoSequence:
    frames: np.ndarray  # (N, H, H)
    gt: LandmarkTrack
    ambiguity_mask: np.ndarray  # (N, L) bool
    seed: int
    fps: float = FPS

    @property
    def video_id(self) -> str:
        return self.gt.video_id

    def __len__(self) -> int:
        return len(self.frames)


def amplitudes(L: int) -> np.ndarray:
    mags = np.linspace(1.0, 0.5, max(1, (L + 1) // 2))
    return np.array([(1 if l % 2 == 0 else -1) * mags[l // 2] for l in range(L)])


def template(L: int) -> np.ndarray:
    if L == 1:
        return np.array([[0.5, 0.5]])
    ang = 2 * np.pi * np.arange(L) / L + np.pi / 4
    return 0.5 + TEMPLATE_RADIUS * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def render(spec: SceneSpec, points: np.ndarray, sides: np.ndarray,
           noise: np.ndarray) -> np.ndarray:
    """Blob image for (L, 2) normalised positions.

    ``sides[l]`` is 0 for a plain blob, or +1/-1 for an ambiguous landmark
    drawn as two decoys at ``p -/+ offset`` along x, the decoy on the
    ``sides[l]`` side being brighter by ``ambiguity_contrast``.
    """
    H = spec.image_size
    c = np.arange(H) + 0.5
    amp = amplitudes(spec.num_landmarks)
    img = np.zeros((H, H))
    off = np.array([spec.ambiguity_offset, 0.0])
    half = spec.ambiguity_contrast / 2
    for l, p in enumerate(points):
        if sides[l]:
            blobs = [(p + sides[l] * off, 1 + half), (p - sides[l] * off, 1 - half)]
        else:
            blobs = [(p, 1.0)]
        for q, gain in blobs:
            px, py = q * H
            gx = np.exp(-((c - px) ** 2) / (2 * spec.blob_sigma**2))
            gy = np.exp(-((c - py) ** 2) / (2 * spec.blob_sigma**2))
            img += gain * amp[l] * np.outer(gy, gx)
    return img + noise.reshape(H, H)


def _sides(mask: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.where(mask, np.where(u < 0.5, 1, -1), 0)


def gen_still(spec: SceneSpec, seed: int):
    """One image, its (L, 2) labels and the ambiguity mask."""
    root = SplitMix64(seed)
    L, H = spec.num_landmarks, spec.image_size
    lay = root.child(_LAYOUT)
    shift = lay.uniform(2, -STILL_SHIFT, STILL_SHIFT)
    jitter = lay.uniform(2 * L, -STILL_JITTER, STILL_JITTER).reshape(L, 2)
    pts = np.clip(template(L) + shift + jitter, 0.1, 0.9)
    mask = np.zeros(L, dtype=bool)
    draws = root.child(_AMBIG).uniform(L)
    for l in spec.designated:
        mask[l] = draws[l] < spec.ambiguity_prob
    sides = _sides(mask, root.child(_LABEL).uniform(L))
    img = render(spec, pts, sides, root.child(_NOISE).normal(H * H, spec.noise_sigma))
    labels = pts.copy()
    labels[:, 0] += sides * spec.ambiguity_offset
    return img, labels, mask


def trajectories(spec: SceneSpec, n_frames: int, seed: int) -> np.ndarray:
    """Smooth (N, L, 2) ground-truth paths inside [0.1, 0.9]^2."""
    L = spec.num_landmarks
    mot = SplitMix64(seed).child(_MOTION)
    base = template(L) + mot.uniform(2, -VIDEO_SHIFT, VIDEO_SHIFT)
    g_period = mot.uniform(2, *GLOBAL_PERIOD) / spec.speed
    g_phase = mot.uniform(2, 0, 2 * np.pi)
    l_period = mot.uniform(2 * L, *LOCAL_PERIOD).reshape(L, 2) / spec.speed
    l_phase = mot.uniform(2 * L, 0, 2 * np.pi).reshape(L, 2)
    t = np.arange(n_frames, dtype=np.float64)[:, None, None]
    glob = GLOBAL_AMP * np.sin(2 * np.pi * t / g_period + g_phase)
    loc = LOCAL_AMP * np.sin(2 * np.pi * t / l_period + l_phase)
    return np.clip(base + glob + loc, 0.1, 0.9)


def gen_video(spec: SceneSpec, n_frames: int, occlusion_window=None, seed: int = 0,
              video_id: Optional[str] = None) -> VideoSequence:
    """Moving landmarks; inside ``occlusion_window = (start, stop)`` each
    designated landmark is ambiguous with probability ``ambiguity_prob``."""
    if n_frames < 1:
        raise SynthError("n_frames must be >= 1")
    if occlusion_window is None:
        start = stop = 0
    else:
        start, stop = (int(v) for v in occlusion_window)
        if not (0 <= start <= stop <= n_frames) or (start == n_frames and stop > start):
            raise SynthError(f"invalid occlusion window {occlusion_window} for {n_frames} frames")
    L, H = spec.num_landmarks, spec.image_size
    root = SplitMix64(seed)
    gt = trajectories(spec, n_frames, seed)
    draws = root.child(_AMBIG).uniform(L)
    occluded = np.zeros(L, dtype=bool)
    for l in spec.designated:
        occluded[l] = draws[l] < spec.ambiguity_prob
    mask = np.zeros((n_frames, L), dtype=bool)
    mask[start:stop] = occluded
    noise = root.child(_NOISE)
    side_draws = root.child(_LABEL).uniform(n_frames * L).reshape(n_frames, L)
    frames = np.stack([render(spec, gt[n], _sides(mask[n], side_draws[n]),
                              noise.normal(H * H, spec.noise_sigma))
                       for n in range(n_frames)])
    vid = video_id if video_id is not None else f"v{seed}"
    return VideoSequence(frames, LandmarkTrack(vid, gt), mask, seed)


def gen_stills(spec: SceneSpec, n: int, seed: int):
    """``n`` stills with per-item seeds derived from ``seed``."""
    seeds = SplitMix64(seed).next_u64(n)
    return [gen_still(spec, int(s)) for s in seeds]


# -- dataset directories ---------------------------------------------------------

class DatasetError(RuntimeError):
    pass


def write_dataset(directory, sequences: Sequence[VideoSequence], spec: Optional[SceneSpec] = None) -> dict:
    """Layout: manifest.json, frames/VVVVV_FFFF.eqg, labels.csv, masks.csv."""
    root = Path(directory)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    entries = []
    for v, seq in enumerate(sequences):
        names = []
        for n, frame in enumerate(seq.frames):
            name = f"frames/{v:05d}_{n:04d}.eqg"
            write_grid(root / name, frame)
            names.append(name)
        entries.append({"video_id": seq.video_id, "seed": seq.seed, "fps": seq.fps,
                        "n_frames": len(seq), "n_landmarks": seq.gt.n_landmarks,
                        "frames": names})
    write_track(root / "labels.csv", [s.gt for s in sequences])
    with open(root / "masks.csv", "w") as fh:
        fh.write("video_id,frame,landmark,ambiguous\n")
        for seq in sequences:
            for n, row in enumerate(seq.ambiguity_mask):
                for l, m in enumerate(row):
                    fh.write(f"{seq.video_id},{n},{l},{int(m)}\n")
    manifest = {"format": "ldeq-dataset-1", "spec": asdict(spec) if spec else None,
                "videos": entries}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


def read_dataset(directory) -> list[VideoSequence]:
    root = Path(directory)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError:
        raise DatasetError(f"missing manifest in {root}") from None
    entries = manifest.get("videos", [])
    if not entries:
        return []
    tracks = {t.video_id: t for t in read_tracks(root / "labels.csv")}
    masks: dict[str, dict[tuple[int, int], bool]] = {}
    with open(root / "masks.csv") as fh:
        next(fh)
        for line in fh:
            vid, n, l, m = line.rstrip("\n").split(",")
            masks.setdefault(vid, {})[int(n), int(l)] = m == "1"
    out = []
    for e in entries:
        vid = e["video_id"]
        if len(e["frames"]) != e["n_frames"]:
            raise DatasetError(f"manifest/file count mismatch for video {vid!r}")
        frames = []
        for name in e["frames"]:
            if not (root / name).is_file():
                raise DatasetError(f"missing frame {name}")
            frames.append(read_grid(root / name))
        gt = tracks.get(vid)
        if gt is None or gt.n_frames != e["n_frames"]:
            raise DatasetError(f"manifest/file count mismatch for labels of {vid!r}")
        L = e["n_landmarks"]
        mask = np.zeros((e["n_frames"], L), dtype=bool)
        for (n, l), m in masks.get(vid, {}).items():
            mask[n, l] = m
        out.append(VideoSequence(np.stack(frames), gt, mask, e["seed"], e.get("fps", FPS)))
    return out

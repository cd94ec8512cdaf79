"""Accuracy (NME) and temporal coherence (NMF) metrics, smoothing baselines,
ensemble statistics and the landmark-track CSV format."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

NME_SCALE = 100.0
NMF_SCALE = 1e4
TRACK_COLUMNS = ("video_id", "frame", "landmark", "x", "y")


class TrackError(ValueError):
    pass


@dataclass
class LandmarkTrack:
    """Per-frame landmark sets; ``points`` has shape (N, L, 2) of (x, y)."""

    video_id: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, pts.shape[1] if pts.ndim == 3 else 0, 2)
        if pts.ndim != 3 or pts.shape[2] != 2:
            raise TrackError(f"track points must be (N, L, 2), got {pts.shape}")
        self.points = pts

    @property
    def n_frames(self) -> int:
        return self.points.shape[0]

    @property
    def n_landmarks(self) -> int:
        return self.points.shape[1]

    def with_points(self, points) -> "LandmarkTrack":
        return LandmarkTrack(self.video_id, points)


@dataclass(frozen=True)
class NormSpec:
    """How to normalise errors.

    ``d0`` is the distance between gt landmarks ``d0_pair`` unless a constant
    ``d0_value`` is given; ``d1^2`` is the gt bounding-box area unless
    ``face_area`` is given.
    """

    d0_pair: tuple[int, int] = (0, 1)
    d0_value: Optional[float] = None
    face_area: Optional[float] = None


def _aligned(pred: LandmarkTrack, gt: LandmarkTrack) -> None:
    if pred.points.shape != gt.points.shape:
        raise TrackError(
            f"track length mismatch: pred {pred.points.shape[:2]} vs gt {gt.points.shape[:2]}"
        )


def reference_distance(gt: LandmarkTrack, spec: NormSpec) -> np.ndarray:
    if spec.d0_value is not None:
        d0 = np.full(gt.n_frames, float(spec.d0_value))
    else:
        i, j = spec.d0_pair
        d0 = np.linalg.norm(gt.points[:, i] - gt.points[:, j], axis=1)
    bad = np.flatnonzero(~(d0 > 0))
    if bad.size:
        raise TrackError(f"degenerate d0 at frame {int(bad[0])}")
    return d0


def face_area(gt: LandmarkTrack, spec: NormSpec) -> np.ndarray:
    if spec.face_area is not None:
        area = np.full(gt.n_frames, float(spec.face_area))
    else:
        span = gt.points.max(axis=1) - gt.points.min(axis=1)
        area = span[:, 0] * span[:, 1]
    bad = np.flatnonzero(~(area > 0))
    if bad.size:
        raise TrackError(f"zero face area at frame {int(bad[0])}")
    return area


def nme(pred: LandmarkTrack, gt: LandmarkTrack, spec: NormSpec = NormSpec()):
    """Per-frame and aggregate normalised mean error, in percent."""
    _aligned(pred, gt)
    d0 = reference_distance(gt, spec)
    err = np.linalg.norm(gt.points - pred.points, axis=2)  # (N, L)
    per_frame = err.mean(axis=1) / d0 * NME_SCALE
    return per_frame, float(per_frame.mean()) if per_frame.size else 0.0


def nmf(pred: LandmarkTrack, gt: LandmarkTrack, spec: NormSpec = NormSpec()):
    """Per-frame (n >= 2) and aggregate normalised mean flicker, scaled by 1e4.

    The aggregate divides the sum of squares over frames 2..N by N.
    """
    _aligned(pred, gt)
    N = gt.n_frames
    if N < 2:
        raise TrackError("nmf needs at least 2 frames")
    area = face_area(gt, spec)
    r = gt.points - pred.points
    dr = r[1:] - r[:-1]
    sq = (dr * dr).sum(axis=2)  # (N-1, L)
    per_frame = np.sqrt(sq.mean(axis=1) / area[1:])
    agg = math.sqrt(float((per_frame**2).sum()) / N)
    return per_frame * NMF_SCALE, agg * NMF_SCALE


# -- filters -------------------------------------------------------------------

def ema_filter(track: LandmarkTrack, w: float) -> LandmarkTrack:
    """y_hat[n] = (1 - w) y_hat[n-1] + w y[n]; smaller w smooths more."""
    if not 0 < w <= 1:
        raise ValueError("ema weight must be in (0, 1]")
    y = track.points
    out = np.empty_like(y)
    if len(y):
        out[0] = y[0]
    for n in range(1, len(y)):
        out[n] = (1 - w) * out[n - 1] + w * y[n]
    return track.with_points(out)


def _lowpass_alpha(cutoff, fps: float):
    tau = 1.0 / (2 * np.pi * cutoff)
    return 1.0 / (1.0 + tau * fps)


def one_euro_filter(track: LandmarkTrack, min_cutoff: float = 1.0, beta: float = 0.0,
                    d_cutoff: float = 1.0, fps: float = 25.0) -> LandmarkTrack:
    """One Euro filter applied independently to every coordinate."""
    if min(min_cutoff, d_cutoff, fps) <= 0 or beta < 0:
        raise ValueError("one euro cutoffs and fps must be positive, beta non-negative")
    y = track.points
    out = np.empty_like(y)
    if not len(y):
        return track.with_points(out)
    out[0] = y[0]
    dx_hat = np.zeros_like(y[0])
    a_d = _lowpass_alpha(d_cutoff, fps)
    for n in range(1, len(y)):
        dx = (y[n] - out[n - 1]) * fps
        dx_hat = a_d * dx + (1 - a_d) * dx_hat
        a = _lowpass_alpha(min_cutoff + beta * np.abs(dx_hat), fps)
        out[n] = a * y[n] + (1 - a) * out[n - 1]
    return track.with_points(out)


def savgol_coeffs(window: int, polyorder: int) -> np.ndarray:
    """Smoothing weights for the centre sample of a least-squares polynomial fit."""
    half = window // 2
    A = np.vander(np.arange(-half, half + 1, dtype=np.float64), polyorder + 1, increasing=True)
    return np.linalg.pinv(A)[0]


def savgol_filter(track: LandmarkTrack, window: int = 5, polyorder: int = 2,
                  mode: str = "mirror") -> LandmarkTrack:
    """Centred Savitzky-Golay smoothing along time.

    ``mode="mirror"`` reflects the signal about its end samples; ``"interp"``
    evaluates the polynomial fitted to the first/last full window instead,
    which leaves low-order polynomials untouched up to the edges.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    if not 0 <= polyorder < window:
        raise ValueError("polyorder must satisfy 0 <= polyorder < window")
    if mode not in ("mirror", "interp"):
        raise ValueError(f"unknown savgol mode {mode!r}")
    y = track.points
    N = len(y)
    if N < window:
        raise ValueError(f"track has {N} frames, fewer than window {window}")
    half = window // 2
    c = savgol_coeffs(window, polyorder)
    if mode == "mirror":
        padded = np.pad(y, ((half, half), (0, 0), (0, 0)), mode="reflect") if half else y
        out = sum(c[k] * padded[k:k + N] for k in range(window))
        return track.with_points(out)
    out = np.empty_like(y)
    out[half:N - half] = sum(c[k] * y[k:k + N - 2 * half] for k in range(window))
    t = np.arange(window, dtype=np.float64)
    A = np.vander(t, polyorder + 1, increasing=True)
    fit = A @ np.linalg.pinv(A)  # samples -> fitted values over one window
    head = np.tensordot(fit, y[:window], axes=([1], [0]))
    tail = np.tensordot(fit, y[N - window:], axes=([1], [0]))
    out[:half] = head[:half]
    out[N - half:] = tail[window - half:]
    return track.with_points(out)


# -- ensembles -----------------------------------------------------------------

def ensemble_mean(items: Sequence):
    """Elementwise mean, sample std (ddof=1; 0 when M == 1) and std / sqrt(M).

    Accepts arrays or :class:`LandmarkTrack` objects (their points are used).
    """
    arrays = [np.asarray(it.points if isinstance(it, LandmarkTrack) else it, dtype=np.float64)
              for it in items]
    if not arrays:
        raise ValueError("ensemble needs at least one member")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ValueError("heterogeneous shapes in ensemble")
    stack = np.stack(arrays)
    M = len(arrays)
    mean = stack.mean(axis=0)
    std = stack.std(axis=0, ddof=1) if M > 1 else np.zeros(shape)
    return mean, std, std / math.sqrt(M)


# -- CSV ------------------------------------------------------------------------

def write_track(path, track: LandmarkTrack | Sequence[LandmarkTrack]) -> None:
    tracks = [track] if isinstance(track, LandmarkTrack) else list(track)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACK_COLUMNS)
        for tr in tracks:
            for n in range(tr.n_frames):
                for l in range(tr.n_landmarks):
                    x, y = tr.points[n, l]
                    w.writerow([tr.video_id, n, l, repr(float(x)), repr(float(y))])


def read_tracks(path) -> list[LandmarkTrack]:
    """All tracks in a CSV, in order of first appearance."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRACK_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise TrackError(f"missing columns: {', '.join(missing)}")
        rows: dict[str, dict[int, dict[int, tuple[float, float]]]] = {}
        for row in reader:
            vid = row["video_id"]
            frames = rows.setdefault(vid, {})
            frames.setdefault(int(row["frame"]), {})[int(row["landmark"])] = (
                float(row["x"]), float(row["y"]))
    tracks = []
    for vid, frames in rows.items():
        n_frames = max(frames) + 1
        L = max(len(v) for v in frames.values())
        pts = np.empty((n_frames, L, 2))
        for n in range(n_frames):
            lm = frames.get(n, {})
            if sorted(lm) != list(range(L)):
                raise TrackError(f"ragged track {vid!r} at frame {n}")
            for l, xy in lm.items():
                pts[n, l] = xy
        tracks.append(LandmarkTrack(vid, pts))
    return tracks


def read_track(path) -> LandmarkTrack:
    tracks = read_tracks(path)
    if not tracks:
        return LandmarkTrack("", np.zeros((0, 0, 2)))
    if len(tracks) > 1:
        raise TrackError(f"{path} holds {len(tracks)} tracks; use read_tracks")
    return tracks[0]


def metrics_record(pred: LandmarkTrack, gt: LandmarkTrack, spec: NormSpec = NormSpec()) -> dict:
    nme_frames, nme_agg = nme(pred, gt, spec)
    nmf_frames, nmf_agg = nmf(pred, gt, spec)
    per_frame = []
    for n in range(gt.n_frames):
        per_frame.append({"frame": n, "nme": float(nme_frames[n]),
                          "nmf": float(nmf_frames[n - 1]) if n else None})
    return {"video_id": gt.video_id, "nme": nme_agg, "nmf": nmf_agg,
            "nme_raw": nme_agg / NME_SCALE, "nmf_raw": nmf_agg / NMF_SCALE,
            "per_frame": per_frame}

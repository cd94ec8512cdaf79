"""Toy landmark DEQ: f(z, x; theta) = sigma(h([enc(x), z]; theta)).

Shapes (batch of one):

    x     (H, H)        single-channel image
    enc   (C, D, D)     two 3x3 convs with tanh, total stride H / D
    h     (L, D, D)     3x3 conv to 2C channels + tanh, then 3x3 conv to L
    z     (L, D, D)     heatmaps, sigma(r) = exp((r - max_c r) / T) per channel

All VJPs are written out by hand.  The per-channel max in sigma is
differentiated as r[argmax]: the argmax index is held fixed, the value is
not, which is the exact derivative wherever the maximum is unique.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numgrid import GridError, ParamVector, as_grid, read_grid, write_grid
from .rng import SplitMix64


@dataclass(frozen=True)
class ArchDescriptor:
    image_size: int = 32
    heatmap_size: int = 16
    num_landmarks: int = 4
    feature_channels: int = 8
    temperature: float = 2.5

    def __post_init__(self):
        if self.image_size % self.heatmap_size:
            raise ValueError("image_size must be a multiple of heatmap_size")
        if self.num_landmarks < 1:
            raise ValueError("num_landmarks must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.feature_channels < 1:
            raise ValueError("feature_channels must be >= 1")

    @property
    def strides(self) -> tuple[int, int]:
        r = self.image_size // self.heatmap_size
        s1 = 2 if r % 2 == 0 else 1
        return s1, r // s1

    @property
    def state_shape(self) -> tuple[int, int, int]:
        return (self.num_landmarks, self.heatmap_size, self.heatmap_size)

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        C, L = self.feature_channels, self.num_landmarks
        return [
            ("enc1.w", (C, 1, 3, 3)), ("enc1.b", (C,)),
            ("enc2.w", (C, C, 3, 3)), ("enc2.b", (C,)),
            ("trunk1.w", (2 * C, C + L, 3, 3)), ("trunk1.b", (2 * C,)),
            ("trunk2.w", (L, 2 * C, 3, 3)), ("trunk2.b", (L,)),
        ]


# -- 3x3 convolution, padding 1 ------------------------------------------------

def _cols(x: np.ndarray, stride: int) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))
    return win[:, ::stride, ::stride]  # (Cin, Ho, Wo, 3, 3)


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    cols = _cols(x, stride)
    return np.tensordot(w, cols, axes=([1, 2, 3], [0, 3, 4])) + b[:, None, None]


def conv3x3_grad_input(g: np.ndarray, w: np.ndarray, in_shape, stride: int = 1) -> np.ndarray:
    cin, hi, wi = in_shape
    ho, wo = g.shape[1:]
    dcols = np.tensordot(w, g, axes=([0], [0]))  # (Cin, 3, 3, Ho, Wo)
    dxp = np.zeros((cin, hi + 2, wi + 2))
    for ki in range(3):
        for kj in range(3):
            dxp[:, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += dcols[:, ki, kj]
    return dxp[:, 1:-1, 1:-1]


def conv3x3_grad_params(g: np.ndarray, x: np.ndarray, stride: int = 1):
    cols = _cols(x, stride)
    dw = np.tensordot(g, cols, axes=([1, 2], [1, 2]))
    return dw, g.sum(axis=(1, 2))


# -- normalisation and decoding ------------------------------------------------

_TINY = np.finfo(np.float64).tiny


def normalize_heatmap(z_raw, T: float) -> np.ndarray:
    """Per channel exp((z - max z) / T); each channel's maximum becomes 1."""
    z_raw = as_grid(z_raw)
    if not T > 0:
        raise ValueError("temperature must be positive")
    if not np.all(np.isfinite(z_raw)):
        raise GridError("non-finite heatmap input")
    flat = z_raw.reshape(z_raw.shape[0], -1)
    s = np.exp((flat - flat.max(axis=1, keepdims=True)) / T)
    # keep the range strictly positive where exp underflows
    return np.maximum(s, _TINY).reshape(z_raw.shape)


def normalize_vjp(z_raw: np.ndarray, s: np.ndarray, u: np.ndarray, T: float) -> np.ndarray:
    L = z_raw.shape[0]
    flat_s = s.reshape(L, -1)
    us = u.reshape(L, -1) * flat_s / T
    g = us.copy()
    k = z_raw.reshape(L, -1).argmax(axis=1)
    g[np.arange(L), k] -= us.sum(axis=1)
    return g.reshape(z_raw.shape)


def _centers(D: int) -> np.ndarray:
    return (np.arange(D) + 0.5) / D


def softargmax(z) -> np.ndarray:
    """Expected pixel-centre coordinates per channel, as (L, 2) rows of (x, y)."""
    z = as_grid(z)
    L, D, _ = z.shape
    sums = z.reshape(L, -1).sum(axis=1)
    if np.any(sums <= 0) or not np.all(np.isfinite(sums)):
        raise GridError("non-positive channel sum in softargmax")
    c = _centers(D)
    px = (z.sum(axis=1) @ c) / sums  # columns
    py = (z.sum(axis=2) @ c) / sums  # rows
    return np.stack([px, py], axis=1)


def softargmax_vjp(z, grad_p) -> np.ndarray:
    """dL/dz given dL/dp for p = softargmax(z)."""
    z = as_grid(z)
    L, D, _ = z.shape
    p = softargmax(z)
    sums = z.reshape(L, -1).sum(axis=1)
    c = _centers(D)
    gx = grad_p[:, 0][:, None] * (c[None, :] - p[:, 0][:, None])  # (L, D) over cols
    gy = grad_p[:, 1][:, None] * (c[None, :] - p[:, 1][:, None])  # over rows
    return (gy[:, :, None] + gx[:, None, :]) / sums[:, None, None]


def mse_loss(pred, gt):
    """Mean squared coordinate error and its gradient w.r.t. ``pred``."""
    pred, gt = as_grid(pred), as_grid(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"landmark count mismatch: {pred.shape} vs {gt.shape}")
    d = pred - gt
    return float(np.mean(d * d)), 2.0 * d / d.size


def channel_entropy(z) -> np.ndarray:
    z = as_grid(z)
    q = z.reshape(z.shape[0], -1)
    q = q / q.sum(axis=1, keepdims=True)
    return -(q * np.log(q)).sum(axis=1)


@dataclass(frozen=True, eq=False)
class Encoded:
    image: np.ndarray
    e1: np.ndarray
    feat: np.ndarray
    theta_data: np.ndarray


# -- the model -----------------------------------------------------------------

class LandmarkDEQ:
    """Hourglass-style map over [encoded image, heatmaps] with exact VJPs."""

    def __init__(self, arch: ArchDescriptor | None = None):
        self.arch = arch or ArchDescriptor()

    # theta handling
    def init_params(self, seed: int) -> ParamVector:
        rng = SplitMix64(seed)
        arrays = []
        for name, shape in self.arch.layer_shapes():
            layer = name.split(".")[0]
            w_shape = dict(self.arch.layer_shapes())[layer + ".w"]
            bound = 1.0 / np.sqrt(np.prod(w_shape[1:]))
            n = int(np.prod(shape))
            arrays.append((name, rng.uniform(n, -bound, bound).reshape(shape)))
        return ParamVector.from_arrays(arrays)

    def zero_params(self) -> ParamVector:
        return ParamVector.from_arrays(
            (name, np.zeros(shape)) for name, shape in self.arch.layer_shapes()
        )

    def _check(self, theta: ParamVector) -> None:
        expected = self.arch.layer_shapes()
        got = [(s.name, s.shape) for s in theta.layout]
        if got != expected:
            raise GridError("theta layout does not match architecture")

    def init_state(self, x=None) -> np.ndarray:
        return np.zeros(self.arch.state_shape)

    # forward pieces
    def prepare(self, x, theta: ParamVector) -> "Encoded":
        """Encode an image once so repeated map evaluations skip the encoder."""
        e1, feat = self.encode(x, theta)
        return Encoded(as_grid(x), e1, feat, theta.data.copy())

    def encode(self, x, theta: ParamVector):
        if isinstance(x, Encoded):
            if x.theta_data is not theta.data and not np.array_equal(x.theta_data, theta.data):
                raise GridError("encoded image was prepared with different parameters")
            return x.e1, x.feat
        self._check(theta)
        x = as_grid(x)
        H = self.arch.image_size
        if x.shape != (H, H):
            raise GridError(f"image must be {H}x{H}, got {x.shape}")
        s1, s2 = self.arch.strides
        e1 = np.tanh(conv3x3(x[None], theta["enc1.w"], theta["enc1.b"], s1))
        e2 = np.tanh(conv3x3(e1, theta["enc2.w"], theta["enc2.b"], s2))
        return e1, e2

    def _trunk(self, feat, z, theta):
        z = as_grid(z)
        if z.shape != self.arch.state_shape:
            raise GridError(f"state must be {self.arch.state_shape}, got {z.shape}")
        inp = np.concatenate([feat, z], axis=0)
        a = np.tanh(conv3x3(inp, theta["trunk1.w"], theta["trunk1.b"]))
        raw = conv3x3(a, theta["trunk2.w"], theta["trunk2.b"])
        return inp, a, raw

    def hourglass_forward(self, x, z, theta: ParamVector) -> np.ndarray:
        """Raw (un-normalised) heatmaps."""
        _, feat = self.encode(x, theta)
        return self._trunk(feat, z, theta)[2]

    def forward(self, z, x, theta: ParamVector) -> np.ndarray:
        return normalize_heatmap(self.hourglass_forward(x, z, theta), self.arch.temperature)

    f_apply = forward

    def decode(self, z) -> np.ndarray:
        return softargmax(z)

    # reverse mode
    def _back_trunk(self, z, x, theta, u):
        e1, feat = self.encode(x, theta)
        inp, a, raw = self._trunk(feat, z, theta)
        s = normalize_heatmap(raw, self.arch.temperature)
        g_raw = normalize_vjp(raw, s, as_grid(u), self.arch.temperature)
        g_a = conv3x3_grad_input(g_raw, theta["trunk2.w"], a.shape) * (1 - a * a)
        g_inp = conv3x3_grad_input(g_a, theta["trunk1.w"], inp.shape)
        return e1, feat, inp, a, g_raw, g_a, g_inp

    def vjp_z(self, z, x, theta: ParamVector, u) -> np.ndarray:
        C = self.arch.feature_channels
        return self._back_trunk(z, x, theta, u)[-1][C:]

    def vjp_theta(self, z, x, theta: ParamVector, u) -> ParamVector:
        C = self.arch.feature_channels
        s1, s2 = self.arch.strides
        e1, feat, inp, a, g_raw, g_a, g_inp = self._back_trunk(z, x, theta, u)
        grads = {}
        grads["trunk2.w"], grads["trunk2.b"] = conv3x3_grad_params(g_raw, a)
        grads["trunk1.w"], grads["trunk1.b"] = conv3x3_grad_params(g_a, inp)
        g_feat = g_inp[:C] * (1 - feat * feat)
        grads["enc2.w"], grads["enc2.b"] = conv3x3_grad_params(g_feat, e1, s2)
        g_e1 = conv3x3_grad_input(g_feat, theta["enc2.w"], e1.shape, s2) * (1 - e1 * e1)
        image = x.image if isinstance(x, Encoded) else as_grid(x)
        grads["enc1.w"], grads["enc1.b"] = conv3x3_grad_params(g_e1, image[None], s1)
        return theta.like(np.concatenate([grads[s.name].ravel() for s in theta.layout]))


# -- checkpoints -----------------------------------------------------------------

def save_params(path, arch: ArchDescriptor, theta: ParamVector) -> None:
    """Write ``<path>.eqg`` (flat parameters) and ``<path>.json`` (manifest)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_grid(path.with_suffix(".eqg"), theta.data)
    manifest = {"arch": asdict(arch), "layout": theta.layout_manifest()}
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_params(path) -> tuple[ArchDescriptor, ParamVector]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    arch = ArchDescriptor(**manifest["arch"])
    theta = ParamVector.from_manifest(read_grid(path.with_suffix(".eqg")), manifest["layout"])
    LandmarkDEQ(arch)._check(theta)
    return arch, theta

"""Fixed-point solvers for z = F(z): plain iteration, Anderson, Broyden.

All three share one convergence test, the relative residual
``|F(z) - z| / max(|z|, 1e-8)`` evaluated at the current iterate, and one
result type.  ``iters`` counts updates of z; the map is evaluated once per
update plus once at the starting point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np

from .numgrid import as_grid

log = logging.getLogger(__name__)

RESIDUAL_FLOOR = 1e-8
BROYDEN_DENOM_MIN = 1e-12
METHODS = ("fpi", "anderson", "broyden")


class SolverError(RuntimeError):
    pass


class DivergenceError(SolverError):
    def __init__(self, iteration: int, msg: str = "divergence (non-finite)"):
        super().__init__(f"{msg} at iteration {iteration}")
        self.iteration = iteration


class UnknownMethodError(SolverError, ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    method: Literal["fpi", "anderson", "broyden"] = "fpi"
    tol: float = 1e-4
    max_iters: int = 50
    anderson_window: int = 5
    anderson_damping: float = 1.0
    anderson_reg: float = 1e-4
    record_trace: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise UnknownMethodError(f"unknown solver method: {self.method!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.anderson_window < 0 or self.anderson_window > self.max_iters:
            raise ValueError("anderson_window must be in [0, max_iters]")
        if not 0 < self.anderson_damping <= 1:
            raise ValueError("anderson_damping must be in (0, 1]")
        if self.anderson_reg < 0:
            raise ValueError("anderson_reg must be non-negative")

    def replace(self, **kw) -> "SolverConfig":
        from dataclasses import replace

        return replace(self, **kw)


@dataclass
class SolverResult:
    z_star: np.ndarray
    residual: float
    iters: int
    converged: bool
    evals: int
    trace: Optional[list[float]] = None
    # Iterations where Anderson fell back to a damped plain step.
    fallback_iters: list[int] = field(default_factory=list)
    # Most floats simultaneously held in solver history buffers.
    peak_floats: int = 0


class CountingMap:
    """Wraps a map and counts evaluations; enforces shape preservation."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn
        self.count = 0

    def __call__(self, z: np.ndarray) -> np.ndarray:
        self.count += 1
        out = as_grid(self.fn(z))
        if out.shape != z.shape:
            raise SolverError(f"map changed shape {z.shape} -> {out.shape}")
        return out


def relative_residual(z: np.ndarray, fz: np.ndarray) -> float:
    num = float(np.linalg.norm((fz - z).ravel()))
    den = max(float(np.linalg.norm(z.ravel())), RESIDUAL_FLOOR)
    return num / den


def _check_finite(a: np.ndarray, k: int) -> None:
    if not np.all(np.isfinite(a)):
        raise DivergenceError(k)


def _residual(z: np.ndarray, fz: np.ndarray, k: int) -> float:
    # finite iterates can still overflow the norm
    res = relative_residual(z, fz)
    if not np.isfinite(res):
        raise DivergenceError(k)
    return res


def _counted(F) -> CountingMap:
    return F if isinstance(F, CountingMap) else CountingMap(F)


def solve_fpi(F, z0, cfg: SolverConfig) -> SolverResult:
    F = _counted(F)
    start = F.count
    z = as_grid(z0).copy()
    _check_finite(z, 0)
    fz = F(z)
    _check_finite(fz, 0)
    res = _residual(z, fz, 0)
    trace = [] if cfg.record_trace else None
    k = 0
    while res > cfg.tol and k < cfg.max_iters:
        k += 1
        z = fz
        fz = F(z)
        _check_finite(fz, k)
        res = _residual(z, fz, k)
        if trace is not None:
            trace.append(res)
    return SolverResult(z, res, k, res <= cfg.tol, F.count - start, trace,
                        peak_floats=2 * z.size)


def solve_anderson(F, z0, cfg: SolverConfig) -> SolverResult:
    """Anderson(m) in difference form with damping and Tikhonov regularization.

    The least-squares coefficients gamma minimise |g_k - dG gamma|^2 +
    lam |gamma|^2 where lam is ``anderson_reg`` scaled by the largest
    diagonal entry of dG^T dG.  The update is
    ``z + beta g - (dZ + beta dG) gamma``; with an empty window this is the
    damped plain iteration ``z + beta (F(z) - z)``.
    """
    F = _counted(F)
    start = F.count
    m, beta = cfg.anderson_window, cfg.anderson_damping
    z = as_grid(z0).copy()
    shape = z.shape
    _check_finite(z, 0)
    fz = F(z)
    _check_finite(fz, 0)
    g = (fz - z).ravel()
    res = _residual(z, fz, 0)
    trace = [] if cfg.record_trace else None
    dz_hist: list[np.ndarray] = []
    dg_hist: list[np.ndarray] = []
    fallbacks: list[int] = []
    peak = 2 * z.size
    k = 0
    while res > cfg.tol and k < cfg.max_iters:
        k += 1
        zf = z.ravel()
        step = beta * g
        if dz_hist:
            dZ = np.stack(dz_hist, axis=1)
            dG = np.stack(dg_hist, axis=1)
            gram = dG.T @ dG
            lam = cfg.anderson_reg * max(float(np.max(np.diag(gram))), 0.0)
            try:
                gamma = np.linalg.solve(gram + lam * np.eye(gram.shape[0]), dG.T @ g)
                if not np.all(np.isfinite(gamma)):
                    raise np.linalg.LinAlgError("non-finite coefficients")
                step = step - (dZ + beta * dG) @ gamma
            except np.linalg.LinAlgError:
                fallbacks.append(k)
                log.debug("anderson least squares singular at iteration %d", k)
        z_new = (zf + step).reshape(shape)
        _check_finite(z_new, k)
        fz = F(z_new)
        _check_finite(fz, k)
        g_new = (fz - z_new).ravel()
        if m > 0:
            dz_hist.append(z_new.ravel() - zf)
            dg_hist.append(g_new - g)
            if len(dz_hist) > m:
                dz_hist.pop(0)
                dg_hist.pop(0)
        peak = max(peak, (2 + 2 * len(dz_hist)) * z.size)
        z, g = z_new, g_new
        res = _residual(z, fz, k)
        if trace is not None:
            trace.append(res)
    return SolverResult(z, res, k, res <= cfg.tol, F.count - start, trace,
                        fallback_iters=fallbacks, peak_floats=peak)


def solve_broyden(F, z0, cfg: SolverConfig) -> SolverResult:
    """Matrix-free good Broyden on g(z) = F(z) - z.

    The inverse Jacobian estimate is ``-I + sum_i u_i v_i^T`` held as two
    lists, so the first step is a plain fixed-point step.
    """
    F = _counted(F)
    start = F.count
    z = as_grid(z0).copy()
    shape = z.shape
    _check_finite(z, 0)
    fz = F(z)
    _check_finite(fz, 0)
    g = (fz - z).ravel()
    res = _residual(z, fz, 0)
    trace = [] if cfg.record_trace else None
    us: list[np.ndarray] = []
    vs: list[np.ndarray] = []

    def h_mv(x):  # H x
        out = -x
        for u, v in zip(us, vs):
            out = out + u * (v @ x)
        return out

    def h_vm(x):  # x^T H
        out = -x
        for u, v in zip(us, vs):
            out = out + (x @ u) * v
        return out

    peak = 2 * z.size
    k = 0
    while res > cfg.tol and k < cfg.max_iters:
        k += 1
        dz = -h_mv(g)
        z_new = z.ravel() + dz
        _check_finite(z_new, k)
        fz = F(z_new.reshape(shape))
        _check_finite(fz, k)
        g_new = fz.ravel() - z_new
        dg = g_new - g
        h_dg = h_mv(dg)
        denom = float(dz @ h_dg)
        if abs(denom) >= BROYDEN_DENOM_MIN and len(us) < cfg.max_iters:
            us.append((dz - h_dg) / denom)
            vs.append(h_vm(dz))
        peak = max(peak, (2 + 2 * len(us)) * z.size)
        z, g = z_new.reshape(shape), g_new
        res = _residual(z, fz, k)
        if trace is not None:
            trace.append(res)
    return SolverResult(z, res, k, res <= cfg.tol, F.count - start, trace,
                        peak_floats=peak)


_DISPATCH = {"fpi": solve_fpi, "anderson": solve_anderson, "broyden": solve_broyden}


def solve(F, z0, cfg: SolverConfig) -> SolverResult:
    try:
        fn = _DISPATCH[cfg.method]
    except KeyError:
        raise UnknownMethodError(f"unknown solver method: {cfg.method!r}") from None
    return fn(F, z0, cfg)

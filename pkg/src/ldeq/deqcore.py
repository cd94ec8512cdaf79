"""Equilibrium forward pass and implicit-function-theorem backward pass.

Models follow the :class:`DeqModel` protocol: ``forward(z, x, theta)`` plus
the two vector-Jacobian products.  Gradients w.r.t. theta come back as a
:class:`ParamVector` when theta is one, otherwise as a plain array.
"""
from __future__ import annotations

import warnings
from typing import Callable, Protocol

import numpy as np

from .numgrid import ParamVector, as_grid
from .solvers import DivergenceError, SolverConfig, SolverError, SolverResult, solve


class DeqModel(Protocol):
    def forward(self, z: np.ndarray, x: np.ndarray, theta) -> np.ndarray: ...

    def vjp_z(self, z: np.ndarray, x: np.ndarray, theta, u: np.ndarray) -> np.ndarray: ...

    def vjp_theta(self, z: np.ndarray, x: np.ndarray, theta, u: np.ndarray): ...

    def init_state(self, x: np.ndarray) -> np.ndarray: ...


class BackwardDivergenceError(SolverError):
    pass


class EquilibriumQualityWarning(UserWarning):
    pass


def deq_forward(model: DeqModel, x, theta, cfg: SolverConfig, z0=None) -> SolverResult:
    """Solve z* = f(z*, x; theta); z0 defaults to the model's zero state."""
    if z0 is None:
        z0 = model.init_state(x)
    return solve(lambda z: model.forward(z, x, theta), z0, cfg)


def deq_backward(model: DeqModel, x, theta, z_star, dL_dz, cfg: SolverConfig,
                 info: dict | None = None):
    """dL/dtheta at an equilibrium, via one linear fixed-point solve.

    Solves u = dL/dz + u^T df/dz at z*, then returns u^T df/dtheta.  Only
    z*, x and theta are needed; nothing from the forward iterations.  When
    ``info`` is given it receives the backward solver's iteration count,
    residual and peak workspace (in floats).
    """
    z_star = as_grid(z_star)
    dL_dz = as_grid(dL_dz)
    fz = model.forward(z_star, x, theta)
    fwd_res = float(np.linalg.norm((fz - z_star).ravel())) / max(
        float(np.linalg.norm(z_star.ravel())), 1e-8
    )
    if fwd_res > 10 * cfg.tol:
        warnings.warn(
            f"equilibrium residual {fwd_res:.3g} exceeds 10x tol {cfg.tol:g}; "
            "implicit gradient may be biased",
            EquilibriumQualityWarning,
            stacklevel=2,
        )
    if not np.any(dL_dz):
        if info is not None:
            info.update(iters=0, residual=0.0, peak_floats=0)
        return _zero_grad(model, x, theta, z_star)
    start = float(np.linalg.norm(model.vjp_z(z_star, x, theta, dL_dz).ravel()))
    try:
        res = solve(lambda u: dL_dz + model.vjp_z(z_star, x, theta, u), dL_dz, cfg)
    except DivergenceError as exc:
        raise BackwardDivergenceError(
            f"backward fixed point diverged at iteration {exc.iteration}"
        ) from exc
    if info is not None:
        info.update(iters=res.iters, residual=res.residual, peak_floats=res.peak_floats)
    # A linear iteration that is not settling has a growing absolute residual.
    final = res.residual * max(float(np.linalg.norm(res.z_star.ravel())), 1e-8)
    if not res.converged and final > start:
        raise BackwardDivergenceError(
            f"backward fixed point diverged (residual grew from {start:.3g} to {final:.3g})"
        )
    return model.vjp_theta(z_star, x, theta, res.z_star)


def _zero_grad(model, x, theta, z_star):
    return model.vjp_theta(z_star, x, theta, np.zeros_like(z_star))


def unrolled_backward(model: DeqModel, x, theta, z0, n_steps: int,
                      dL_dz_fn: Callable[[np.ndarray], np.ndarray]):
    """Backprop through ``n_steps`` explicit iterations of f (O(n) memory).

    Returns ``(grad, retained_floats)`` where the second item is the number of
    floats stored for the reverse sweep.
    """
    zs = [as_grid(z0)]
    for k in range(n_steps):
        z_next = model.forward(zs[-1], x, theta)
        if not np.all(np.isfinite(z_next)):
            raise DivergenceError(k + 1, "non-finite intermediate")
        zs.append(z_next)
    retained = sum(z.size for z in zs)
    u = as_grid(dL_dz_fn(zs[-1]))
    grad = None
    for k in range(n_steps - 1, -1, -1):
        g_k = model.vjp_theta(zs[k], x, theta, u)
        grad = g_k if grad is None else _add(grad, g_k)
        if k:
            u = model.vjp_z(zs[k], x, theta, u)
    if grad is None:
        grad = _zero_grad(model, x, theta, zs[0])
    return grad, retained


def _add(a, b):
    if isinstance(a, ParamVector):
        return a.like(a.data + b.data)
    return a + b


def finite_diff_grad(loss_of_theta: Callable, theta, eps: float = 1e-5):
    """Central differences of a scalar loss, one coordinate at a time."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    if isinstance(theta, ParamVector):
        base = theta.data
        wrap = theta.like
    else:
        base = as_grid(theta)
        wrap = lambda d: d.reshape(base.shape)  # noqa: E731
    flat = base.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        plus = flat.copy()
        plus[i] += eps
        minus = flat.copy()
        minus[i] -= eps
        grad[i] = (loss_of_theta(wrap(plus)) - loss_of_theta(wrap(minus))) / (2 * eps)
    return wrap(grad)

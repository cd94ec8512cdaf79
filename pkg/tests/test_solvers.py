import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ldeq.experiments import linear_contraction
from ldeq.solvers import (CountingMap, DivergenceError, SolverConfig, SolverError,
                          UnknownMethodError, solve,
                          solve_anderson, solve_broyden, solve_fpi)

COS_FIXED_POINT = 0.7390851332151607  # Dottie number, long FPI oracle below


def cfg(method, **kw):
    return SolverConfig(method=method, **{"tol": 1e-10, "max_iters": 500, **kw})


def test_dottie_oracle():
    z = 1.0
    for _ in range(2000):
        z = np.cos(z)
    assert abs(z - COS_FIXED_POINT) < 1e-15


@pytest.mark.parametrize("method", ["fpi", "anderson", "broyden"])
def test_affine_scalar(method):
    res = solve(lambda z: 0.5 * z + 1.0, np.array([0.0]), cfg(method))
    assert res.converged
    assert abs(res.z_star[0] - 2.0) < 1e-9


def test_fpi_contracts_to_origin():
    res = solve_fpi(lambda z: 0.5 * z, np.array([3.0, -7.0]), SolverConfig(tol=1e-6))
    assert res.converged
    assert np.abs(res.z_star).max() < 1e-5


@pytest.mark.parametrize("method", ["anderson", "broyden"])
def test_cosine(method):
    res = solve(np.cos, np.array([1.0]), cfg(method))
    assert abs(res.z_star[0] - COS_FIXED_POINT) < 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_linear_benchmark(seed):
    A, b, z_exact = linear_contraction(seed)
    iters = {}
    for m in ("fpi", "anderson", "broyden"):
        res = solve(lambda z: A @ z + b, np.zeros(16), cfg(m))
        np.testing.assert_allclose(res.z_star, z_exact, atol=1e-6)
        iters[m] = res.iters
    assert iters["anderson"] <= iters["fpi"]


def test_anderson_window_zero_is_damped_fpi():
    A, b, _ = linear_contraction(4)
    F = lambda z: A @ z + b  # noqa: E731
    c = SolverConfig(method="anderson", anderson_window=0, anderson_damping=0.7, tol=1e-12,
                     max_iters=30, record_trace=True)
    res = solve_anderson(F, np.zeros(16), c)
    z = np.zeros(16)
    for _ in range(res.iters):
        z = z + 0.7 * (F(z) - z)
    np.testing.assert_array_equal(res.z_star, z)


def test_anderson_singular_falls_back():
    # constant map: all residual differences vanish after the first step
    res = solve_anderson(lambda z: np.ones_like(z), np.zeros(3),
                         SolverConfig(method="anderson", tol=1e-12, max_iters=5))
    np.testing.assert_allclose(res.z_star, 1.0)


def test_broyden_tiny_denominator_skips_update():
    res = solve_broyden(lambda z: z * 0 + 2.0, np.array([2.0 + 1e-15]),
                        SolverConfig(method="broyden", tol=1e-30, max_iters=3,
                                     anderson_window=0))
    assert np.isfinite(res.z_star).all()


@pytest.mark.parametrize("method", ["fpi", "anderson", "broyden"])
def test_divergence_is_error(method):
    with pytest.raises(DivergenceError, match=r"divergence \(non-finite\)") as info:
        with np.errstate(over="ignore", invalid="ignore"):
            solve(lambda z: z * 1e200 + 1e300, np.array([1.0]), cfg(method, max_iters=20))
    assert info.value.iteration >= 0


def test_non_converged_finite_return():
    res = solve_fpi(lambda z: 0.99 * z + 1, np.zeros(1), SolverConfig(tol=1e-12, max_iters=3, anderson_window=3))
    assert not res.converged and res.iters == 3


def test_unknown_method():
    with pytest.raises(UnknownMethodError, match="unknown solver method"):
        SolverConfig(method="newton")


def test_config_invariants():
    with pytest.raises(ValueError):
        SolverConfig(tol=0)
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolverConfig(method="anderson", anderson_window=10, max_iters=5)


def test_dispatch_identical():
    A, b, _ = linear_contraction(2)
    F = lambda z: A @ z + b  # noqa: E731
    for m, fn in (("fpi", solve_fpi), ("anderson", solve_anderson), ("broyden", solve_broyden)):
        c = cfg(m)
        r1, r2 = solve(F, np.zeros(16), c), fn(F, np.zeros(16), c)
        assert r1.z_star.tobytes() == r2.z_star.tobytes() and r1.iters == r2.iters


def test_shape_contract():
    F = CountingMap(lambda z: z[:-1])
    with pytest.raises(SolverError, match="changed shape"):
        F(np.zeros(3))


@pytest.mark.parametrize("method", ["fpi", "anderson", "broyden"])
def test_evals_are_counted(method):
    A, b, _ = linear_contraction(5)
    calls = []

    def F(z):
        calls.append(1)
        return A @ z + b

    res = solve(F, np.zeros(16), cfg(method, record_trace=True))
    assert res.evals == len(calls) == res.iters + 1
    assert len(res.trace) == res.iters


@st.composite
def contractions(draw):
    seed = draw(st.integers(0, 2**31 - 1))
    dim = draw(st.integers(1, 8))
    radius = draw(st.floats(0.05, 0.8))
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(dim, dim))
    A *= radius / np.linalg.norm(A, 2)  # operator norm < 1: a true contraction
    return A, rng.normal(size=dim)


@given(contractions())
def test_solvers_agree_on_contractions(ab):
    A, b = ab
    F = lambda z: np.tanh(A @ z) + b  # noqa: E731
    tol = 1e-9
    zs = []
    for m in ("fpi", "anderson", "broyden"):
        res = solve(F, np.zeros(len(b)), SolverConfig(method=m, tol=tol, max_iters=2000,
                                                       anderson_window=5))
        assert res.converged and res.residual <= tol
        zs.append(res.z_star)
    scale = max(np.linalg.norm(zs[0]), 1e-8)
    for i in range(3):
        for j in range(i):
            assert np.linalg.norm(zs[i] - zs[j]) <= 10 * tol * scale * 10 + 1e-12


@given(contractions())
def test_fpi_trace_monotone_for_linear(ab):
    # The relative residual is monotone when |z_k| cannot shrink, which holds
    # from z0 = 0 for symmetric contractions with non-negative spectrum; an
    # oscillating map (A = -0.75) makes |z_k| and the ratio zig-zag.
    A, b = ab
    A = A @ A.T
    res = solve_fpi(lambda z: A @ z + b, np.zeros(len(b)),
                    SolverConfig(tol=1e-10, max_iters=500, record_trace=True))
    tr = np.array(res.trace)
    assert np.all(np.diff(tr) <= 1e-12 + 1e-9 * tr[:-1])


def test_determinism():
    A, b, _ = linear_contraction(9)
    for m in ("fpi", "anderson", "broyden"):
        r1 = solve(lambda z: A @ z + b, np.zeros(16), cfg(m))
        r2 = solve(lambda z: A @ z + b, np.zeros(16), cfg(m))
        assert r1.z_star.tobytes() == r2.z_star.tobytes()

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ldeq.inference import (RwrConfig, VideoAbort, infer_cold, infer_cold_video, infer_relaxed,
                            infer_rwr, solve_relaxed)
from ldeq.solvers import SolverConfig
from ldeq.synth import SceneSpec, gen_video

TIGHT = SolverConfig(method="fpi", tol=1e-10, max_iters=500)


class LinearStub:
    """f(z, x) = A z + x with a fixed contraction A; decode is the identity."""

    def __init__(self, dim=6, radius=0.6, seed=0):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(dim, dim))
        self.A = A * radius / np.linalg.norm(A, 2)
        self.dim = dim

    def forward(self, z, x, theta):
        return self.A @ z + x

    def vjp_z(self, z, x, theta, u):
        return self.A.T @ u

    def init_state(self, x=None):
        return np.zeros(self.dim)

    def decode(self, z):
        return z.reshape(-1, 2)

    def exact(self, x):
        return np.linalg.solve(np.eye(self.dim) - self.A, x)


class HalfMap(LinearStub):
    """f(z) = z / 2 in one dimension: the relaxed optimum from z_prev = 1 is a/(a + 1/2)."""

    def __init__(self):
        self.A = np.array([[0.5]])
        self.dim = 1

    def decode(self, z):
        return np.array([[z[0], 0.0]])


def test_identical_frames_need_at_most_one_iteration():
    m = LinearStub()
    x = np.arange(6.0) / 6
    cfg = RwrConfig(step_cap=None, solver=SolverConfig(method="fpi", tol=1e-8, max_iters=500))
    _, diags = infer_rwr(m, None, [x] * 5, cfg)
    assert diags[0].iters > 1
    assert all(d.iters <= 1 for d in diags[1:])


def test_uncapped_rwr_matches_cold():
    m = LinearStub(seed=3)
    rng = np.random.default_rng(0)
    frames = [rng.normal(size=6) for _ in range(6)]
    cfg = RwrConfig(step_cap=None, solver=TIGHT)
    rwr, _ = infer_rwr(m, None, frames, cfg)
    cold, _ = infer_cold_video(m, None, frames, TIGHT)
    np.testing.assert_allclose(rwr.points, cold.points, atol=1e-8)
    for n, x in enumerate(frames):
        np.testing.assert_allclose(cold.points[n].ravel(), m.exact(x), atol=1e-8)


@given(k=st.integers(1, 5))
def test_iterations_respect_step_cap(k):
    m = LinearStub(seed=1)
    rng = np.random.default_rng(k)
    frames = [rng.normal(size=6) for _ in range(5)]
    _, diags = infer_rwr(m, None, frames, RwrConfig(step_cap=k, solver=TIGHT))
    assert all(d.iters <= k for d in diags[1:])


def test_first_frame_is_cold():
    m = LinearStub(seed=2)
    frames = [np.ones(6), np.zeros(6)]
    rwr, _ = infer_rwr(m, None, frames, RwrConfig(step_cap=1, solver=TIGHT))
    z, _, _ = infer_cold(m, None, frames[0], TIGHT)
    np.testing.assert_array_equal(rwr.points[0], m.decode(z))


def test_rwr_states_and_distances():
    m = LinearStub(seed=4)
    frames = [np.full(6, v) for v in (0.0, 0.1, 0.2)]
    _, diags, states = infer_rwr(m, None, frames, RwrConfig(step_cap=2, solver=TIGHT),
                                 keep_states=True)
    assert len(states) == 3
    assert diags[0].dist_prev == 0.0
    assert diags[2].dist_prev == pytest.approx(np.linalg.norm(states[2] - states[1]))


def test_empty_video_rejected():
    with pytest.raises(ValueError):
        infer_rwr(LinearStub(), None, [], RwrConfig())


def test_divergence_aborts_video_with_frame_index():
    m = LinearStub()
    m.A = 10.0 * np.eye(6)
    with np.errstate(all="ignore"), pytest.raises(VideoAbort) as ei:
        infer_cold_video(m, None, [np.ones(6)], SolverConfig(method="fpi", tol=1e-10,
                                                             max_iters=2000))
    assert ei.value.frame == 0


@pytest.mark.parametrize("alpha", [0.0, 0.1, 0.5, 1.0, 4.0, 1e6])
def test_relaxed_scalar_fixture(alpha):
    cfg = RwrConfig(alpha=alpha, relaxed_steps=2000, relaxed_lr=1.0)
    res = solve_relaxed(HalfMap(), None, np.zeros(1), np.ones(1), cfg)
    assert res.z[0] == pytest.approx(alpha / (alpha + 0.5), abs=1e-6)


def test_relaxed_limits():
    stay = solve_relaxed(HalfMap(), None, np.zeros(1), np.ones(1), RwrConfig(alpha=1e6))
    assert stay.z[0] == pytest.approx(1.0, abs=1e-6)
    free = solve_relaxed(HalfMap(), None, np.zeros(1), np.ones(1),
                         RwrConfig(alpha=0.0, relaxed_steps=2000))
    assert abs(free.z[0]) < 1e-6


@given(alpha=st.floats(0.0, 10.0), seed=st.integers(0, 100))
def test_relaxed_objective_non_increasing(alpha, seed):
    m = LinearStub(seed=seed)
    rng = np.random.default_rng(seed)
    res = solve_relaxed(m, None, rng.normal(size=6), rng.normal(size=6),
                        RwrConfig(alpha=alpha, relaxed_steps=50))
    assert np.all(np.diff(res.objective) <= 0)
    assert res.steps <= 50


def test_infer_relaxed_on_stub():
    m = LinearStub(seed=5)
    frames = [np.full(6, 0.3)] * 3
    track, diags = infer_relaxed(m, None, frames, RwrConfig(alpha=1.0, solver=TIGHT))
    assert track.points.shape == (3, 3, 2)
    # the warm state is already the fixed point, so it stays put
    np.testing.assert_allclose(track.points[2].ravel(), m.exact(frames[0]), atol=1e-8)


def test_real_model_rwr_respects_cap(tiny_model):
    model = tiny_model
    theta = model.init_params(0)
    video = gen_video(SceneSpec(num_landmarks=model.arch.num_landmarks,
                                image_size=model.arch.image_size, ambiguity_prob=1.0),
                      8, (2, 6), seed=0)
    cfg = RwrConfig(step_cap=2)
    track, diags = infer_rwr(model, theta, video.frames, cfg)
    assert track.points.shape == (8, model.arch.num_landmarks, 2)
    assert all(d.iters <= 2 for d in diags[1:])
    assert np.all(np.isfinite(track.points))


def _symmetric_psd_stub(seed, dim=6, radius=0.8):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    m = LinearStub(dim=dim)
    m.A = Q @ np.diag(rng.uniform(0, radius, size=dim)) @ Q.T
    return m


@given(seed=st.integers(0, 10_000), k=st.integers(1, 6))
def test_proximity_and_k_monotonicity_for_symmetric_psd_maps(seed, k):
    # K steps give z_K - z_prev = (I - A^K)(z* - z_prev); with A symmetric and
    # 0 <= eig(A) < 1 the factor shrinks, and more steps move farther away.
    m = _symmetric_psd_stub(seed)
    rng = np.random.default_rng(seed + 1)
    frames = [rng.normal(size=6), rng.normal(size=6)]
    dists = []
    for cap in (k, k + 1):
        _, _, states = infer_rwr(m, None, frames, RwrConfig(step_cap=cap, solver=TIGHT),
                                 keep_states=True)
        dists.append(np.linalg.norm(states[1] - states[0]))
    z_cold = m.exact(frames[1])
    assert dists[0] <= np.linalg.norm(z_cold - states[0]) + 1e-12
    assert dists[0] <= dists[1] + 1e-12


def test_proximity_can_fail_for_rotating_maps():
    # f(z) = 0.9 R z with R a quarter turn: the fixed point is 0, but one step
    # from e1 lands at distance sqrt(1 + 0.81) > 1 from the warm start.
    m = LinearStub(dim=2)
    m.A = 0.9 * np.array([[0.0, -1.0], [1.0, 0.0]])
    z_prev = np.array([1.0, 0.0])
    one_step = m.forward(z_prev, np.zeros(2), None)
    assert np.linalg.norm(one_step - z_prev) == pytest.approx(np.sqrt(1.81))
    assert np.linalg.norm(one_step - z_prev) > np.linalg.norm(m.exact(np.zeros(2)) - z_prev)

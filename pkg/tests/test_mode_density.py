import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fmbalance import mode_density as md
from fmbalance.errors import DomainError, SamplingError
from fmbalance.shear_rha import FailureMode


class LinearSurrogate:
    """Stand-in surrogate with mean c + w.u and a constant predictive variance."""

    def __init__(self, c, w, var=1.0):
        self.c = float(c)
        self.w = np.asarray(w, dtype=float)
        self.var = var

    @property
    def dim(self):
        return self.w.shape[0]

    def predict(self, U):
        U = np.atleast_2d(U)
        return self.c + U @ self.w, np.full(U.shape[0], self.var)


# --- learning criterion ------------------------------------------------------------

def test_criterion_examples():
    alpha, ct = md._criterion(np.array([[0.5, 0.2, 0.9]]), np.array([[1.0, 0.1, 1.0]]))
    assert ct[0] == 1 and alpha[0] == pytest.approx(2.0, rel=1e-15)
    alpha, _ = md._criterion(np.array([[0.0, 1.0]]), np.array([[0.3, 1.0]]))
    assert alpha[0] == 0.0
    alpha, _ = md._criterion(np.array([[-0.6, 3.0]]), np.array([[0.3, 1.0]]))
    assert alpha[0] == pytest.approx(2.0)
    alpha, _ = md._criterion(np.array([[0.4, 3.0]]), np.array([[0.0, 1.0]]))
    assert alpha[0] == np.inf


def test_criterion_through_models():
    models = [LinearSurrogate(0.5, [0.0]), LinearSurrogate(-0.2, [0.0], var=0.01), LinearSurrogate(0.9, [0.0])]
    alpha, ct = md.learning_criterion(models, np.zeros((1, 1)))
    assert ct[0] == 1 and alpha[0] == pytest.approx(2.0)


def test_models_must_share_dimension():
    with pytest.raises(DomainError):
        md.predict_all([LinearSurrogate(0, [1.0]), LinearSurrogate(0, [1.0, 2.0])], np.zeros((1, 1)))


# --- active learning -------------------------------------------------------------------

def _linear_harness(n=500, d=3, seed=0):
    U = np.random.default_rng(seed).standard_normal((n, d))
    W = np.array([[-1.0, 0.0, 0.0], [0.0, 0.8, -0.6]])
    c = np.array([2.0, 1.8])

    def labeler(i):
        return c + W @ U[i]

    return U, labeler


def test_linear_truth_converges_quickly():
    U, labeler = _linear_harness()
    res = md.run_active_learning(U, labeler, 30, budget=60, seed=1, n_starts=2)
    assert res.converged and res.n_added <= 40
    assert len(res.labeled) == len(set(res.labeled)) == 30 + res.n_added
    for m in res.models:
        assert m.X.shape[0] == len(res.labeled)


def test_budget_zero_returns_initial_models():
    U, labeler = _linear_harness()
    res = md.run_active_learning(U, labeler, 5, budget=0, seed=2, n_starts=1)
    assert not res.converged and res.n_added == 0 and res.models[0].X.shape[0] == 5


def test_each_added_point_had_minimum_alpha(monkeypatch):
    U, labeler = _linear_harness(n=200)
    seen = []
    orig = md.learning_criterion

    def spy(models, X):
        out = orig(models, X)
        seen.append(out[0].copy())
        return out

    monkeypatch.setattr(md, "learning_criterion", spy)
    res = md.run_active_learning(U, labeler, 10, budget=15, seed=3, n_starts=1)
    assert len(res.log) == res.n_added
    for row, alpha in zip(res.log, seen):
        assert row["alpha"] == np.min(alpha)
        assert row["alpha"] <= md.ALPHA_STOP
    if res.converged:
        assert np.min(seen[-1]) > md.ALPHA_STOP


def test_active_learning_errors():
    U, labeler = _linear_harness(n=20)
    with pytest.raises(DomainError):
        md.run_active_learning(U, labeler, 20, budget=5)
    with pytest.raises(DomainError):
        md.run_active_learning(U, labeler, 5, budget=-1)


def test_log_written_one_based(tmp_path):
    U, labeler = _linear_harness(n=150)
    res = md.run_active_learning(U, labeler, 10, budget=3, seed=4, n_starts=1)
    res.write_log(tmp_path / "al.csv")
    lines = (tmp_path / "al.csv").read_text().splitlines()
    assert lines[0] == "iteration,pool_index,alpha,ct,point"
    assert len(lines) == 1 + res.n_added
    assert all(line.split(",")[3] in ("1", "2") for line in lines[1:])


# --- n-ball sampling -------------------------------------------------------------------

@given(st.integers(1, 15), st.floats(0.1, 10.0), st.integers(0, 1000))
@settings(max_examples=30)
def test_ball_norms_bounded(n, r, seed):
    ball = md.n_ball_sample(n, r, 200, seed)
    assert ball.samples.shape == (200, n)
    assert np.all(np.linalg.norm(ball.samples, axis=1) <= r * (1 + 1e-12))


def test_ball_one_dimensional_uniform():
    ball = md.n_ball_sample(1, 5.0, 10_000, 11)
    assert stats.kstest(ball.samples[:, 0], stats.uniform(loc=-5, scale=10).cdf).pvalue > 0.01


def test_ball_radial_law():
    n, R = 11, 5.0
    r = np.linalg.norm(md.n_ball_sample(n, R, 10_000, 12).samples, axis=1)
    assert stats.kstest(r, lambda x: np.clip(x / R, 0, 1) ** n).pvalue > 0.01


def test_ball_errors():
    with pytest.raises(DomainError):
        md.n_ball_sample(0, 1.0, 10, 0)
    with pytest.raises(DomainError):
        md.n_ball_sample(2, 0.0, 10, 0)


# --- mode classification ------------------------------------------------------------------

def test_all_safe_models_give_no_modes():
    ball = md.n_ball_sample(2, 5.0, 1000, 0)
    assert md.classify_modes(ball, [LinearSurrogate(100.0, [1.0, 0.0]), LinearSurrogate(100.0, [0.0, 1.0])]) == {}


def test_half_space_geometry():
    # g1 = 1 - u0, g2 = 1 - u1: failure quadrants beyond u0 > 1 and/or u1 > 1
    models = [LinearSurrogate(1.0, [-1.0, 0.0]), LinearSurrogate(1.0, [0.0, -1.0])]
    ball = md.n_ball_sample(2, 5.0, 20_000, 1)
    modes = md.classify_modes(ball, models)
    assert {m.label for m in modes} == {"10", "01", "11"}
    # the partition covers the ball exactly once
    n_fail = sum(v.shape[0] for v in modes.values())
    safe = np.all(ball.samples <= 1.0, axis=1).sum()
    assert n_fail + safe == ball.samples.shape[0]
    # quadrant "11" area fraction against numerical quadrature
    frac = modes[FailureMode((1, 1))].shape[0] / ball.samples.shape[0]
    assert frac == pytest.approx(_corner_area(1.0, 5.0) / (25 * math.pi), abs=0.01)


def _corner_area(a, R):
    """Area of {x > a, y > a, x^2 + y^2 <= R^2}."""
    from scipy import integrate
    top = math.sqrt(R * R - a * a)
    return integrate.quad(lambda x: max(math.sqrt(max(R * R - x * x, 0.0)) - a, 0.0), a, top)[0]


def test_min_support_drops_rare_modes():
    models = [LinearSurrogate(4.5, [-1.0, 0.0]), LinearSurrogate(-100.0, [0.0, 0.0])]
    ball = md.n_ball_sample(2, 5.0, 2000, 2)
    everything = md.classify_modes(ball, models)
    assert set(m.label for m in everything) == {"01", "11"}
    n11 = everything[FailureMode((1, 1))].shape[0]
    trimmed = md.classify_modes(ball, models, min_support=n11 + 1)
    assert set(m.label for m in trimmed) == {"01"}


# --- GMM ------------------------------------------------------------------------------------

def test_single_cluster_mean():
    rng = np.random.default_rng(0)
    X = rng.normal([1.0, -2.0], [0.5, 0.2], size=(400, 2))
    dens = md.fit_gmm(X, 1, seed=0)
    se = X.std(axis=0) / math.sqrt(400)
    assert np.all(np.abs(dens.means[0] - X.mean(axis=0)) < 3 * se)
    assert dens.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_planted_clusters_recovered():
    rng = np.random.default_rng(1)
    X = np.vstack((rng.normal([-5, 0], 1.0, (500, 2)), rng.normal([5, 0], 1.0, (500, 2))))
    dens = md.fit_gmm(X, 2, seed=3)
    centres = np.sort(dens.means[:, 0])
    assert centres[0] == pytest.approx(-5, abs=0.1) and centres[1] == pytest.approx(5, abs=0.1)
    assert abs(dens.weights.sum() - 1) < 1e-9


@given(st.integers(0, 10_000), st.integers(1, 4))
@settings(max_examples=15, deadline=None)
def test_weights_normalized(seed, n_m):
    X = np.random.default_rng(seed).standard_normal((60, 2)) * [1, 3]
    dens = md.fit_gmm(X, n_m, seed=seed, restarts=2)
    assert abs(dens.weights.sum() - 1) < 1e-9 and np.all(dens.weights > 0)
    for c in dens.covariances:
        np.testing.assert_allclose(c, c.T)
        assert np.min(np.linalg.eigvalsh(c)) > 0


def test_too_few_samples_falls_back():
    X = np.random.default_rng(2).standard_normal((8, 3))
    with pytest.warns(RuntimeWarning):
        dens = md.fit_gmm(X, 3, seed=0)
    assert dens.n_components == 1
    with pytest.raises(SamplingError):
        md.fit_gmm(X[:1], 1, seed=0)


def test_density_integrates_to_one():
    rng = np.random.default_rng(4)
    X = np.vstack((rng.normal(-1, 0.5, (200, 2)), rng.normal(2, 0.8, (300, 2))))
    dens = md.fit_gmm(X, 2, seed=1)
    g = np.linspace(-8, 9, 341)
    xx, yy = np.meshgrid(g, g)
    p = np.exp(dens.logpdf(np.column_stack((xx.ravel(), yy.ravel()))))
    h = g[1] - g[0]
    assert p.sum() * h * h == pytest.approx(1.0, abs=1e-3)


def test_resample_and_refit_recovers_weights():
    truth = md.ModeDensity(FailureMode((1,)), np.array([0.3, 0.7]), np.array([[-4.0, 0.0], [4.0, 1.0]]),
                           np.array([np.eye(2), 0.5 * np.eye(2)]))
    X = truth.sample(100_000, np.random.default_rng(5))
    dens = md.fit_gmm(X, 2, seed=0, restarts=2)
    order = np.argsort(dens.means[:, 0])
    np.testing.assert_allclose(dens.weights[order], [0.3, 0.7], atol=0.05)


def test_density_json_round_trip(tmp_path):
    X = np.random.default_rng(6).standard_normal((100, 3))
    dens = md.fit_gmm(X, 2, seed=0, mode=FailureMode((0, 1, 1)))
    md.save_densities([dens], tmp_path / "d.json")
    back = md.load_densities(tmp_path / "d.json")[0]
    assert back.mode.label == "011" and back.support == 100
    np.testing.assert_allclose(back.logpdf(X), dens.logpdf(X))


# --- sampling from mode densities ----------------------------------------------------------------

def _half_space_setup():
    models = [LinearSurrogate(1.0, [-1.0, 0.0]), LinearSurrogate(100.0, [0.0, 0.0])]
    ball = md.n_ball_sample(2, 5.0, 20_000, 7)
    pts = md.classify_modes(ball, models)[FailureMode((1, 0))]
    return models, md.fit_gmm(pts, 3, seed=0, mode=FailureMode((1, 0)))


def test_half_space_acceptance_and_purity():
    models, dens = _half_space_setup()
    acc, rate = md.sample_mode_density(dens, models, 500, seed=1)
    assert acc.shape == (500, 2) and rate > 0.5
    assert np.all(md.predicted_bits(models, acc) == np.array([1, 0]))
    assert np.all(np.isfinite(dens.logpdf(acc)))


def test_zero_count_gives_empty():
    models, dens = _half_space_setup()
    acc, _ = md.sample_mode_density(dens, models, 0, seed=1)
    assert acc.shape == (0, 2)


def test_low_acceptance_names_mode():
    models, dens = _half_space_setup()
    # models that never predict this mode
    never = [LinearSurrogate(100.0, [0.0, 0.0]), LinearSurrogate(100.0, [0.0, 0.0])]
    with pytest.raises(SamplingError, match="10"):
        md.sample_mode_density(dens, never, 50, seed=1)

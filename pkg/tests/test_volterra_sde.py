import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svolterra import kernels as K
from svolterra import noise as Nz
from svolterra import resolvent as R
from svolterra import scenarios as S
from svolterra import volterra_sde as V
from svolterra.errors import ConfigurationError
from svolterra.timegrid import make_grid


@pytest.fixture(scope="module")
def noise128():
    return Nz.sample_wiener(make_grid(1.0, 128), 1, 600, 17)


def test_skeleton_without_noise_is_the_deterministic_solve():
    g = make_grid(1.0, 64)
    c = S.additive_linear()
    X = V.controlled_solve(c, None, None, 0.0, V.SolveConfig(), grid=g).X[0, :, 0]
    x = R.linear_volterra_solve(c.g_values(g)[:, 0], c.drift_kernel[0], g)
    np.testing.assert_allclose(X, x, rtol=1e-12)


def test_schilder_is_scaled_brownian_motion(noise128):
    c = S.schilder(x0=0.5, sigma=2.0)
    X = V.controlled_solve(c, None, noise128, 0.25, V.SolveConfig()).X[:, :, 0]
    np.testing.assert_allclose(X, 0.5 + 2.0 * 0.5 * noise128.paths()[:, :, 0], atol=1e-12)


def test_ito_isometry_of_noise_weights():
    # squared cell-rms weights integrate sigma^2 exactly per cell
    g = make_grid(1.0, 32)
    c = S.ou_mild(lam=1.5)
    Wb = c.noise_weights(g)[0]
    t = g.nodes
    var = (Wb ** 2) @ g.widths
    np.testing.assert_allclose(var, -np.expm1(-3.0 * t) / 3.0, rtol=1e-12, atol=1e-15)


def test_worker_and_control_invariance(noise128):
    c = S.lipschitz()
    base = V.euler_solve(c, noise128)
    par = V.euler_solve(c, noise128, V.SolveConfig(workers=3))
    zero = V.controlled_solve(c, V.Control.zeros(noise128.grid, 1), noise128, 1.0, V.SolveConfig())
    np.testing.assert_array_equal(par.X, base.X)
    np.testing.assert_array_equal(zero.X, base.X)


def test_picard_matches_euler(noise128):
    c = S.lipschitz()
    xe = V.euler_solve(c, noise128)
    xp, rep = V.picard_solve(c, noise128, V.SolveConfig(scheme="picard", picard_tol=1e-10))
    assert rep.converged and rep.distances[-1] <= 1e-10
    assert np.max(np.abs(xe.X - xp.X)) < 1e-8


def test_stopping_freezes_paths(noise128):
    c = S.linear_growth(rate=2.0, vol=1.5)
    R_ = 2.0
    r = V.euler_solve(c, noise128, V.SolveConfig(stop_radius=R_))
    X = r.X[:, :, 0]
    for p in np.flatnonzero(r.exploded)[:20]:
        tau = r.tau_index[p]
        assert abs(X[p, tau]) > R_
        assert np.all(np.abs(X[p, :tau]) <= R_)
        assert np.all(X[p, tau:] == X[p, tau])
    assert np.all(r.tau_index[~r.exploded] == noise128.grid.N + 1)


def test_nonexplosion_report_nested_and_validated(noise128):
    rep = V.nonexplosion_report(S.linear_growth(), noise128, [1.5, 3.0, 6.0])
    assert rep.nested
    assert list(rep.fractions) == sorted(rep.fractions, reverse=True)
    with pytest.raises(ConfigurationError):
        V.nonexplosion_report(S.linear_growth(), noise128, [3.0, 1.5])
    with pytest.raises(ConfigurationError):
        V.nonexplosion_report(S.ou_mild(), noise128, [1.0])


def test_moment_report(noise128):
    c = S.additive_linear()
    r = V.euler_solve(c, noise128)
    rep2, rep4 = V.moment_report(r, [2, 4], c)
    assert rep2.bounded and rep4.bounded
    assert np.all(rep2.ci_lo[1:] <= rep2.mean[1:]) and np.all(rep2.mean[1:] <= rep2.ci_hi[1:])
    # Jensen: E X^4 >= (E X^2)^2
    assert np.all(rep4.mean >= rep2.mean ** 2 - 1e-12)
    with pytest.raises(ConfigurationError):
        V.moment_report(r, [1.0])


def test_holder_report_preconditions(noise128):
    with pytest.raises(ConfigurationError):
        V.holder_report(noise128)  # fewer than 256 cells
    e = Nz.sample_wiener(make_grid(1.0, 256, "graded", 2.0), 1, 200, 1)
    with pytest.raises(ConfigurationError):
        V.holder_report(e)


def test_holder_report_brownian():
    e = Nz.sample_wiener(make_grid(1.0, 256), 1, 300, 2)
    est = V.holder_report(e)
    assert abs(est.exponent - 0.5) < 0.05
    assert est.ci_lo <= est.exponent <= est.ci_hi


def test_wilson_interval_against_formula():
    for k, n in [(0, 100), (7, 50), (50, 50)]:
        lo, hi = V.wilson_interval(k, n)
        z = 1.96
        p = k / n
        centre = (p + z * z / (2 * n)) / (1 + z * z / n)
        half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
        assert lo == pytest.approx(max(0.0, centre - half), abs=1e-12)
        assert hi == pytest.approx(min(1.0, centre + half), abs=1e-12)


def test_dependence_experiment_decreases(noise128):
    ms = [1, 4, 16]
    rows = V.dependence_experiment(S.perturbed_noise_family(ms), S.lipschitz(), noise128,
                                   V.SolveConfig(), [0.05], ms)
    med = [r.sup_distance_median for r in rows]
    assert med[0] > med[1] > med[2]


def test_separable_declaration_is_checked():
    ka = K.power(1.0, 0.3, 0.0)
    with pytest.raises(ConfigurationError):
        V.Coefficients(d=1, m=1, g=0.0, drift_kernel=ka, drift_fn=lambda s, x: x,
                       drift=lambda t, s, x: ((t - s) ** -0.3)[..., None] * 2 * x)
    with pytest.raises(ConfigurationError):
        V.Coefficients(d=1, m=1, g=0.0, drift_kernel=ka)


def test_squared_kernel_exact_cases():
    k = K.exp_convolution(0.5, 2.0)
    sq = V.squared_kernel(k)
    assert sq.label == "expconv" and sq.params == (0.25, 4.0)
    with pytest.raises(ConfigurationError):
        V.squared_kernel(K.power(1.0, 0.5, 0.0))


def test_path_csv(tmp_path, noise128):
    r = V.euler_solve(S.ou_mild(), noise128.subset(slice(0, 2)))
    p = tmp_path / "paths.csv"
    r.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1] == "path,node,component,value,tau_index"
    assert len(lines) == 2 + 2 * 129


def test_solver_rejects_mismatched_noise(noise128):
    with pytest.raises(ConfigurationError):
        V.euler_solve(S.ou_mild(), Nz.sample_wiener(noise128.grid, 2, 10, 1))
    with pytest.raises(ConfigurationError):
        V.controlled_solve(S.ou_mild(), None, None, 1.0, V.SolveConfig(), grid=noise128.grid)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-2, 2), b=st.floats(-2, 2))
def test_additive_noise_enters_linearly(a, b):
    # additive noise: the solution is affine in the driving increments
    g = make_grid(1.0, 16)
    e = Nz.sample_wiener(g, 1, 2, 5)
    inc = e.increments
    c = S.additive_linear()
    mk = lambda x: Nz.NoiseEnsemble(g, x, None)  # noqa: E731
    X0 = V.euler_solve(c, mk(np.zeros_like(inc))).X
    X1 = V.euler_solve(c, mk(inc[:1])).X - X0[:1]
    X2 = V.euler_solve(c, mk(inc[1:])).X - X0[:1]
    Xab = V.euler_solve(c, mk(a * inc[:1] + b * inc[1:])).X - X0[:1]
    np.testing.assert_allclose(Xab, a * X1 + b * X2, atol=1e-10)

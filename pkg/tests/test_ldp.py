import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from svolterra import ldp as L
from svolterra import scenarios as S
from svolterra.errors import ConfigurationError
from svolterra.timegrid import make_grid
from svolterra.volterra_sde import Control


def test_ball_distance_and_contains():
    ball = L.TerminalSet("ball", (1.0, 0.0), tol=0.5)
    x = np.array([[1.0, 0.0], [1.3, 0.4], [3.0, 0.0]])
    np.testing.assert_allclose(ball.distance(x), [0.0, 0.0, 1.5])
    assert ball.contains(x).tolist() == [True, True, False]


def test_halfspace_distance_is_normalised():
    hs = L.TerminalSet("halfspace", (2.0,), level=2.0)
    np.testing.assert_allclose(hs.distance(np.array([[0.0], [1.0], [5.0]])), [1.0, 0.0, 0.0])


def test_all_set_contains_everything():
    s = L.TerminalSet("all")
    assert s.contains(np.array([[1e9], [-3.0]])).all()


@pytest.mark.parametrize("kw", [dict(kind="disc"), dict(kind="ball", tol=0.0)])
def test_terminal_set_rejects_bad_input(kw):
    with pytest.raises(ConfigurationError):
        L.TerminalSet(**kw)


def test_control_norm_of_constant_control():
    g = make_grid(2.0, 16)
    h = Control(g, np.full(16, 3.0))
    assert L.control_norm(h) == pytest.approx(3.0 * math.sqrt(2.0))


def test_control_from_coarse_spreads_cells():
    g = make_grid(1.0, 8)
    h = Control.from_coarse(g, [1.0, -1.0])
    assert h.hdot[:, 0].tolist() == [1.0] * 4 + [-1.0] * 4


def test_control_radius_enforced():
    g = make_grid(1.0, 8)
    with pytest.raises(ConfigurationError):
        Control(g, np.full(8, 2.0), radius=1.0)
    with pytest.raises(ConfigurationError):
        Control(g, np.full(7, 0.0))


def test_skeleton_of_schilder_is_integrated_control():
    g = make_grid(1.0, 32)
    h = Control(g, np.full(32, 0.7))
    X = L.skeleton(S.schilder(0.2, 2.0), h)
    np.testing.assert_allclose(X[:, 0], 0.2 + 2.0 * 0.7 * g.nodes, atol=1e-12)


def test_rate_schilder_ball():
    c = S.schilder(0.0, 1.0)
    est = L.rate_minimize(c, L.TerminalSet("ball", (1.5,), tol=0.01), make_grid(1.0, 32), M=4)
    # nearest point of the ball is 1.49
    assert est.feasible
    assert est.I == pytest.approx(1.49 ** 2 / 2, rel=0.02)


def test_rate_linear_drift_matches_gramian():
    r, T, y = -0.5, 1.0, 1.0
    c = S.linear_drift(0.0, r, 1.0)
    est = L.rate_minimize(c, L.TerminalSet("halfspace", (1.0,), level=y), make_grid(T, 64), M=8)
    gram = math.expm1(2 * r * T) / (2 * r)
    # piecewise-constant controls can only approach the optimum from above
    assert est.feasible
    assert 0.98 * y ** 2 / (2 * gram) <= est.I <= 1.04 * y ** 2 / (2 * gram)


def test_rate_zero_when_skeleton_already_inside():
    c = S.schilder(2.0, 1.0)
    est = L.rate_minimize(c, L.TerminalSet("halfspace", (1.0,), level=1.0), make_grid(1.0, 16))
    assert est.I == 0.0 and est.feasible
    assert L.rate_minimize(c, L.TerminalSet("all"), make_grid(1.0, 16)).I == 0.0


def test_rate_infeasible_without_noise_direction():
    c = S.schilder(0.0, 0.0)
    est = L.rate_minimize(c, L.TerminalSet("halfspace", (1.0,), level=1.0), make_grid(1.0, 16),
                          M=2, opt=L.RateOptions(max_rounds=3, maxiter=200, prescan=5))
    assert not est.feasible and est.I == math.inf and est.control is None


def test_small_noise_requires_decreasing_eps():
    c = S.schilder()
    ev = L.TerminalSet("halfspace", (1.0,), level=1.0)
    with pytest.raises(ConfigurationError):
        L.small_noise_estimate(c, [0.25, 0.5], ev, 100, 1, make_grid(1.0, 8))
    with pytest.raises(ConfigurationError):
        L.small_noise_estimate(c, [0.5, 0.0], ev, 100, 1, make_grid(1.0, 8))


def test_small_noise_all_levels_skipped():
    c = S.schilder()
    ev = L.TerminalSet("halfspace", (1.0,), level=50.0)
    with pytest.raises(L.EmptyResultError):
        L.small_noise_estimate(c, [0.5, 0.25], ev, 200, 1, make_grid(1.0, 8))


def test_small_noise_rows_are_consistent():
    c = S.schilder()
    ev = L.TerminalSet("halfspace", (1.0,), level=1.0)
    rows = L.small_noise_estimate(c, [1.0, 0.5], ev, 4000, 7, make_grid(1.0, 8), minus_I=-0.5)
    for r in rows:
        assert not r.skipped and r.hits >= 10
        assert r.ci_lo <= r.eps_log_p <= r.ci_hi
        assert r.eps_log_p == pytest.approx(r.eps * math.log(r.p_hat))
        assert r.minus_I == -0.5


def test_small_noise_reproducible_across_workers():
    from svolterra.volterra_sde import SolveConfig
    c = S.schilder()
    ev = L.TerminalSet("halfspace", (1.0,), level=1.0)
    a = L.small_noise_estimate(c, [0.5], ev, 3000, 3, make_grid(1.0, 8))
    b = L.small_noise_estimate(c, [0.5], ev, 3000, 3, make_grid(1.0, 8), cfg=SolveConfig(workers=3))
    assert a == b


def _G(X):
    return np.clip(np.asarray(X)[..., -1, 0], -1.0, 1.0)


def test_laplace_approaches_variational_value():
    c = S.schilder()
    g = make_grid(1.0, 8)
    rows = L.laplace_estimate(c, _G, 1.0, [0.5, 0.1], 20000, 5, g, M=2)
    # inf_x clip(x) + x^2 / 2 = -1/2 at x = -1
    assert rows[0].variational == pytest.approx(0.5, abs=1e-3)
    assert not any(r.flagged for r in rows)
    assert abs(rows[1].estimate - 0.5) < abs(rows[0].estimate - 0.5) + 1e-12
    for r in rows:
        # X_eps(T) = sqrt(eps) Z, so the expectation is a one-dimensional integral
        f = lambda z, e=r.eps: math.exp(-float(np.clip(math.sqrt(e) * z, -1, 1)) / e - z * z / 2)
        exact = r.eps * math.log(integrate.quad(f, -np.inf, np.inf)[0]
                                 / math.sqrt(2 * math.pi))
        assert r.estimate == pytest.approx(exact, abs=0.01)


def test_laplace_flags_unbounded_functional():
    c = S.schilder()
    rows = L.laplace_estimate(c, _G, 0.1, [0.5], 500, 5, make_grid(1.0, 8), M=1)
    assert rows[0].flagged and math.isnan(rows[0].estimate)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(0.01, 1.0))
def test_ball_distance_is_nonnegative_and_zero_inside(x, tol):
    ball = L.TerminalSet("ball", (0.0,), tol=tol)
    d = float(ball.distance(np.array([x])))
    assert d >= 0.0
    assert (d == 0.0) == (abs(x) <= tol)
    assert d == pytest.approx(max(abs(x) - tol, 0.0))

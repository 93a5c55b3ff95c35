"""Large-deviation tools: control norms, rate-function minimisation over
piecewise-constant controls, and small-noise Monte Carlo estimates.

The rate of a terminal set ``S`` is ``inf { |h|^2 / 2 : X^h(T) in S }``
where ``X^h`` is the skeleton (the controlled equation with ``eps = 0``).
It is computed by Nelder-Mead on ``M`` control cells with a quadratic
penalty whose weight grows until the constraint residual is below a
tenth of the set's tolerance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import ConfigurationError, SvolterraError
from .noise import sample_wiener
from .timegrid import Grid
from .volterra_sde import Coefficients, Control, SolveConfig, controlled_solve, wilson_interval

__all__ = ["control_norm", "TerminalSet", "RateOptions", "RateEstimate", "rate_minimize",
           "SmallNoiseRow", "small_noise_estimate", "LaplaceRow", "laplace_estimate",
           "variational_value", "EmptyResultError", "skeleton"]


class EmptyResultError(SvolterraError):
    """Every Monte Carlo level was skipped."""


def control_norm(h: Control) -> float:
    """Cameron-Martin norm ``(sum_j |hdot_j|^2 width_j)^(1/2)``."""
    return h.norm()


@dataclass(frozen=True)
class TerminalSet:
    """A set of terminal values ``X(T)``.

    ``kind="ball"``: ``|x - y| <= tol``.  ``kind="halfspace"``:
    ``w . x >= level`` (``y`` holds ``w``), with ``tol`` the admissible
    constraint slack.  ``kind="all"`` is the whole space.
    """

    kind: str
    y: tuple = ()
    tol: float = 0.01
    level: float = 0.0

    def __post_init__(self):
        if self.kind not in ("ball", "halfspace", "all"):
            raise ConfigurationError(f"unknown terminal set kind {self.kind!r}")
        if self.tol <= 0:
            raise ConfigurationError("terminal set tolerance must be positive")
        object.__setattr__(self, "y", tuple(float(v) for v in np.atleast_1d(self.y)))

    def distance(self, x: np.ndarray) -> np.ndarray:
        """Distance of terminal values ``x`` (shape ``(..., d)``) to the set."""
        x = np.asarray(x, dtype=float)
        if self.kind == "all":
            return np.zeros(x.shape[:-1])
        y = np.asarray(self.y)
        if self.kind == "ball":
            return np.maximum(np.sqrt(np.sum((x - y) ** 2, axis=-1)) - self.tol, 0.0)
        w = y / np.linalg.norm(y)
        return np.maximum(self.level / np.linalg.norm(y) - x @ w, 0.0)

    def contains(self, x: np.ndarray) -> np.ndarray:
        return self.distance(x) <= 0.0


@dataclass(frozen=True)
class RateOptions:
    """Optimizer settings.

    ``ball_radius`` bounds ``|h|``; by default it is ``4 sqrt(2 I_guess)``
    from a pre-scan over constant controls.
    """

    mu0: float = 1.0
    mu_growth: float = 10.0
    max_rounds: int = 10
    maxiter: int = 4000
    xatol: float = 1e-7
    fatol: float = 1e-10
    ball_radius: Optional[float] = None
    prescan: int = 41


@dataclass(frozen=True)
class RateEstimate:
    control: Optional[Control]
    I: float
    residual: float
    feasible: bool
    mu: float
    trace: tuple = ()
    evaluations: int = 0


def skeleton(c: Coefficients, h: Control, cfg: SolveConfig = SolveConfig()) -> np.ndarray:
    """Skeleton path ``X^h`` (``eps = 0``), shape ``(N + 1, d)``."""
    return controlled_solve(c, h, None, 0.0, cfg, grid=h.grid).X[0]


def _coarse_norm2(v, lengths):
    return float(np.sum(v ** 2 * lengths[:, None]))


def _lengths(grid: Grid, M: int) -> np.ndarray:
    mid = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
    idx = np.minimum((mid / grid.T * M).astype(int), M - 1)
    return np.bincount(idx, weights=grid.widths, minlength=M)


def rate_minimize(c: Coefficients, target: TerminalSet, grid: Grid, M: int = 8,
                  opt: RateOptions = RateOptions(), cfg: SolveConfig = SolveConfig(),
                  objective: Optional[Callable] = None) -> RateEstimate:
    """Minimise ``|h|^2 / 2`` over controls with ``M`` cells whose skeleton ends in ``target``.

    Returns ``I = inf`` (``feasible=False``) when the penalty residual never
    falls below ``target.tol / 10`` inside the control ball.
    """
    if M < 1:
        raise ConfigurationError("need at least one control cell")
    m = c.m
    lengths = _lengths(grid, M)
    evals = [0]
    trace = []

    def terminal(v):
        h = Control.from_coarse(grid, v.reshape(M, m))
        evals[0] += 1
        return skeleton(c, h, cfg)[-1]

    def resid(v):
        xT = terminal(v)
        if not np.all(np.isfinite(xT)):
            return math.inf
        return float(target.distance(xT))

    if target.kind == "all":
        return RateEstimate(Control.zeros(grid, m), 0.0, 0.0, True, 0.0, (), 0)
    r0 = resid(np.zeros(M * m))
    if r0 <= 0.0:
        return RateEstimate(Control.zeros(grid, m), 0.0, 0.0, True, 0.0, ((0, 0.0),), evals[0])

    # pre-scan constant controls along each noise direction
    radius = opt.ball_radius
    best_v, best_I = np.zeros(M * m), math.inf
    amp = np.linspace(-8.0, 8.0, opt.prescan)
    for k in range(m):
        for a in amp:
            v = np.zeros((M, m))
            v[:, k] = a
            v = v.ravel()
            if resid(v) <= target.tol / 10:
                I = 0.5 * _coarse_norm2(v.reshape(M, m), lengths)
                if I < best_I:
                    best_v, best_I = v, I
    if radius is None:
        radius = 4.0 * math.sqrt(2.0 * best_I) if np.isfinite(best_I) and best_I > 0 else 4.0 * 8.0 * math.sqrt(grid.T * m)

    def project(v):
        n = math.sqrt(_coarse_norm2(v.reshape(M, m), lengths))
        return v if n <= radius else v * (radius / n)

    x = best_v.copy()
    mu = opt.mu0
    last = None
    for rnd in range(opt.max_rounds):
        def J(v, mu=mu):
            v = project(v)
            r = resid(v)
            if not np.isfinite(r):
                return 1e300
            return 0.5 * _coarse_norm2(v.reshape(M, m), lengths) + mu * r * r

        simplex = None
        res = minimize(J, x, method="Nelder-Mead",
                       options=dict(maxiter=opt.maxiter, xatol=opt.xatol, fatol=opt.fatol,
                                    adaptive=M * m > 4, initial_simplex=simplex))
        x = project(res.x)
        I = 0.5 * _coarse_norm2(x.reshape(M, m), lengths)
        r = resid(x)
        trace.append((rnd, mu, I, r))
        if r < target.tol / 10:
            last = (x.copy(), I, r, mu)
            break
        mu *= opt.mu_growth
    if last is None:
        return RateEstimate(None, math.inf, float(r), False, mu, tuple(trace), evals[0])
    x, I, r, mu = last
    h = Control.from_coarse(grid, x.reshape(M, m), radius=radius * (1 + 1e-9))
    return RateEstimate(h, float(I), float(r), True, mu, tuple(trace), evals[0])


@dataclass(frozen=True)
class SmallNoiseRow:
    eps: float
    p_hat: float
    eps_log_p: float
    ci_lo: float
    ci_hi: float
    minus_I: float
    hits: int
    skipped: bool


def _level_seed(seed: int, level: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(level)]).generate_state(1)[0])


def small_noise_estimate(c: Coefficients, eps_list: Sequence[float], event: TerminalSet,
                         P: int, seed: int, grid: Grid, minus_I: float = math.nan,
                         cfg: SolveConfig = SolveConfig()) -> list:
    """``eps log P(X_eps(T) in event)`` per level with Wilson 95% intervals.

    Levels with fewer than 10 hits are flagged ``skipped`` (their estimate
    is ``nan``).  ``ci_lo``/``ci_hi`` are on the ``eps log p`` scale.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])) or min(eps_list) <= 0:
        raise ConfigurationError("eps_list must be positive and decreasing")
    rows = []
    for lvl, eps in enumerate(eps_list):
        noise = sample_wiener(grid, c.m, P, _level_seed(seed, lvl), workers=cfg.workers)
        X = controlled_solve(c, None, noise, eps, cfg).X[:, -1]
        k = int(np.sum(event.contains(X)))
        lo, hi = wilson_interval(k, P)
        if k < 10:
            rows.append(SmallNoiseRow(eps, k / P, math.nan, math.nan, math.nan, minus_I, k, True))
            continue
        p = k / P
        rows.append(SmallNoiseRow(eps, p, eps * math.log(p), eps * math.log(lo),
                                  eps * math.log(hi), minus_I, k, False))
    if all(r.skipped for r in rows):
        raise EmptyResultError("every small-noise level had fewer than 10 hits")
    return rows


@dataclass(frozen=True)
class LaplaceRow:
    eps: float
    estimate: float
    variational: float
    flagged: bool


def variational_value(c: Coefficients, G: Callable, grid: Grid, M: int = 8,
                      opt: RateOptions = RateOptions(), cfg: SolveConfig = SolveConfig()) -> float:
    """``inf_h { G(X^h) + |h|^2 / 2 }`` over ``M``-cell controls (Nelder-Mead from 0)."""
    m = c.m
    lengths = _lengths(grid, M)

    def J(v):
        h = Control.from_coarse(grid, v.reshape(M, m))
        X = skeleton(c, h, cfg)
        val = G(X)
        return float(val) + 0.5 * _coarse_norm2(v.reshape(M, m), lengths)

    best = J(np.zeros(M * m))
    # constant-control pre-scan avoids the flat region of bounded G
    starts = [np.zeros(M * m)]
    for k in range(m):
        for a in np.linspace(-4, 4, 33):
            v = np.zeros((M, m))
            v[:, k] = a
            starts.append(v.ravel())
    vals = [J(v) for v in starts]
    x0 = starts[int(np.argmin(vals))]
    res = minimize(J, x0, method="Nelder-Mead",
                   options=dict(maxiter=opt.maxiter, xatol=opt.xatol, fatol=opt.fatol,
                                adaptive=M * m > 4))
    return float(min(best, min(vals), res.fun))


def laplace_estimate(c: Coefficients, G: Callable, G_bound: float, eps_list: Sequence[float],
                     P: int, seed: int, grid: Grid, M: int = 8,
                     cfg: SolveConfig = SolveConfig()) -> list:
    """``eps log E exp(-G(X_eps) / eps)`` per level, next to ``-inf_h {G(X^h) + |h|^2/2}``.

    ``G`` maps a path array ``(N + 1, d)`` or a batch ``(P, N + 1, d)`` to
    reals and must satisfy ``|G| <= G_bound``; values outside flag the level.
    """
    var = -variational_value(c, G, grid, M, cfg=cfg)
    rows = []
    for lvl, eps in enumerate(eps_list):
        noise = sample_wiener(grid, c.m, P, _level_seed(seed, lvl), workers=cfg.workers)
        X = controlled_solve(c, None, noise, float(eps), cfg).X
        Gv = np.asarray(G(X), dtype=float).reshape(P)
        flagged = bool(np.any(~np.isfinite(Gv)) or np.any(np.abs(Gv) > G_bound * (1 + 1e-12)))
        est = float(eps * (logsumexp(-Gv / eps) - math.log(P))) if not flagged else math.nan
        rows.append(LaplaceRow(float(eps), est, var, flagged))
    return rows

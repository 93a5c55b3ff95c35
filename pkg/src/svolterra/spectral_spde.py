"""Spectral model of a semilinear heat equation on (0, 1) with Dirichlet conditions.

Modes ``e_k(x) = sqrt(2) sin(k pi x)`` with eigenvalues
``lam_k = mu + (k pi)**2``.  The mild equation decouples into one scalar
Volterra equation per mode with kernel ``exp(-lam_k (t - s))``; nonlinear
terms are applied pointwise on an interior grid through a type-I sine
transform round trip.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import fft
from scipy.optimize import brentq

from . import kernels as kmod
from .errors import ConfigurationError
from .noise import NoiseEnsemble, fbm_weights
from .resolvent import TriTable
from .timegrid import Grid
from .volterra_sde import Coefficients, PathResult, SolveConfig, euler_solve

__all__ = ["SpectralModel", "SpectralState", "NoiseOperator", "semigroup_apply", "frac_norm",
           "semigroup_bound_report", "interpolation_check", "mild_solve", "strong_residual",
           "fbm_convolution_kernel", "fbm_convolution_table", "exp_convolution_weights"]


@dataclass(frozen=True)
class SpectralModel:
    """``K`` Dirichlet modes with shift ``mu > 0`` and ``Mx >= K`` interior grid points."""

    K: int
    mu: float = 1.0
    Mx: Optional[int] = None
    lam: np.ndarray = field(init=False, repr=False)
    x: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ConfigurationError("mode count K must be a positive integer")
        if not self.mu > 0:
            raise ConfigurationError("shift mu must be positive")
        Mx = self.K if self.Mx is None else int(self.Mx)
        if Mx < self.K:
            raise ConfigurationError("need at least K interior grid points")
        object.__setattr__(self, "Mx", Mx)
        k = np.arange(1, self.K + 1)
        lam = self.mu + (k * np.pi) ** 2
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        xg = np.arange(1, Mx + 1) / (Mx + 1)
        xg.setflags(write=False)
        object.__setattr__(self, "x", xg)

    def to_physical(self, coeffs: np.ndarray) -> np.ndarray:
        """``u(x_j) = sum_k c_k e_k(x_j)`` along the last axis."""
        c = np.asarray(coeffs, dtype=float)
        if self.Mx > self.K:
            pad = np.zeros(c.shape[:-1] + (self.Mx - self.K,))
            c = np.concatenate([c, pad], axis=-1)
        return fft.dst(c, type=1, axis=-1) * (math.sqrt(2.0) / 2.0)

    def to_modes(self, u: np.ndarray) -> np.ndarray:
        """Discrete ``L2`` projection onto the first ``K`` modes."""
        c = fft.dst(np.asarray(u, dtype=float), type=1, axis=-1) * (
            math.sqrt(2.0) / (2.0 * (self.Mx + 1)))
        return c[..., :self.K]

    def kernels(self):
        return tuple(kmod.exp_convolution(1.0, float(l)) for l in self.lam)


@dataclass(frozen=True)
class SpectralState:
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if not np.all(np.isfinite(c)):
            raise ConfigurationError("state coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)


def _coeffs(s):
    return s.coeffs if isinstance(s, SpectralState) else np.asarray(s, dtype=float)


@dataclass(frozen=True)
class NoiseOperator:
    """Mode-by-noise matrix ``b`` (``K x m``).

    ``multiplicative=True`` means ``Psi(x)[k, j] = b[k, j] x_k`` (diagonal
    linear in the state); otherwise ``Psi`` is state independent.
    """

    b: np.ndarray
    multiplicative: bool = False

    def __post_init__(self):
        b = np.array(self.b, dtype=float)
        if b.ndim != 2 or not np.all(np.isfinite(b)):
            raise ConfigurationError("noise operator must be a finite K x m matrix")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @classmethod
    def diagonal(cls, sigma: Sequence[float], multiplicative: bool = False) -> "NoiseOperator":
        return cls(np.diag(np.asarray(sigma, dtype=float)), multiplicative)

    @property
    def hs_norm(self) -> float:
        return float(np.sqrt(np.sum(self.b ** 2)))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``Psi(x)`` with shape ``x.shape + (m,)``."""
        if self.multiplicative:
            return self.b * x[..., :, None]
        return np.broadcast_to(self.b, x.shape + (self.b.shape[1],))


def semigroup_apply(model: SpectralModel, s, t: float) -> np.ndarray:
    """``x_k -> exp(-lam_k t) x_k``."""
    if t < 0:
        raise ConfigurationError("semigroup time must be nonnegative")
    return np.exp(-model.lam * t) * _coeffs(s)


def frac_norm(model: SpectralModel, s, alpha: float) -> float:
    """``(sum_k lam_k^(2 alpha) x_k^2)^(1/2)``."""
    c = _coeffs(s)
    return float(np.sqrt(np.sum(model.lam ** (2 * alpha) * c ** 2)))


def _sup_iv(alpha: float) -> float:
    """``sup_{u > 0} (1 - exp(-u)) / u**alpha``."""
    if alpha >= 1:
        return 1.0  # limit u -> 0 for alpha = 1; decreasing function
    if alpha <= 0:
        return 1.0  # limit u -> inf
    # stationary point: u exp(-u) = alpha (1 - exp(-u))
    f = lambda u: u * math.exp(-u) - alpha * (-math.expm1(-u))  # noqa: E731
    u = brentq(f, 1e-12, 50.0 / alpha, xtol=1e-15, rtol=1e-15)
    return -math.expm1(-u) / u ** alpha


@dataclass(frozen=True)
class BoundRow:
    kind: str
    alpha: float
    observed: float
    envelope: float

    @property
    def ok(self) -> bool:
        return self.observed <= self.envelope + 1e-9


def semigroup_bound_report(model: SpectralModel, alpha_list: Sequence[float],
                           t_grid: Sequence[float]) -> list:
    """Smoothing (``t^a lam^a e^{-lam t} <= (a/e)^a``) and approximation
    (``(1 - e^{-lam t}) / (lam t)^a <= sup``) envelopes over modes and times."""
    t = np.asarray(t_grid, dtype=float)
    t = t[t > 0]
    u = model.lam[None, :] * t[:, None]
    rows = []
    for a in alpha_list:
        a = float(a)
        obs = float(np.max(u ** a * np.exp(-u)))
        env = 1.0 if a == 0 else (a / math.e) ** a
        rows.append(BoundRow("smoothing", a, obs, env))
        if 0 <= a <= 1:
            obs4 = float(np.max(-np.expm1(-u) / u ** a))
            rows.append(BoundRow("approximation", a, obs4, _sup_iv(a)))
    return rows


def interpolation_check(model: SpectralModel, alpha: float, beta: float, n: int = 100,
                        seed: int = 0) -> float:
    """Largest ratio ``|x|_beta / (|x|^(1 - beta/alpha) |x|_alpha^(beta/alpha))``
    over ``n`` random states (at most 1 by Hölder's inequality)."""
    if not 0 <= beta < alpha:
        raise ConfigurationError("need 0 <= beta < alpha")
    rng = np.random.default_rng(seed)
    worst = 0.0
    th = beta / alpha
    for _ in range(n):
        c = rng.normal(size=model.K) * rng.uniform(0.1, 1.0) ** np.arange(model.K)
        lhs = frac_norm(model, c, beta)
        rhs = frac_norm(model, c, 0.0) ** (1 - th) * frac_norm(model, c, alpha) ** th
        worst = max(worst, lhs / rhs)
    return worst


def _model_coefficients(model: SpectralModel, x0, Phi: Optional[Callable],
                        Psi: Optional[NoiseOperator], m: int, clip: float) -> Coefficients:
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.K,):
        raise ConfigurationError(f"initial state must have {model.K} coefficients")
    lam = model.lam
    ks = model.kernels()
    kw = {}
    if Phi is not None:
        def drift_fn(s, x):
            u = model.to_physical(x)
            if np.isfinite(clip):
                u = np.clip(u, -clip, clip)
            return model.to_modes(Phi(u))
        kw.update(drift_kernel=ks, drift_fn=drift_fn)
    if Psi is not None:
        if Psi.b.shape != (model.K, m):
            raise ConfigurationError(f"noise operator must be {model.K} x {m}")
        kw.update(diffusion_kernel=ks, diffusion_fn=lambda s, x: Psi.apply(x))
    return Coefficients(d=model.K, m=m, g=lambda t: np.exp(-np.outer(t, lam)) * x0,
                        label="spectral", **kw)


def mild_solve(model: SpectralModel, x0, Phi: Optional[Callable], Psi: Optional[NoiseOperator],
               noise: NoiseEnsemble, cfg: SolveConfig = SolveConfig()) -> PathResult:
    """Mode-wise mild solution on the noise grid (delegates to the Euler recursion)."""
    c = _model_coefficients(model, x0, Phi, Psi, noise.m, cfg.stop_radius)
    return euler_solve(c, noise, cfg)


def strong_residual(model: SpectralModel, sol: PathResult, x0, Phi: Optional[Callable],
                    Psi: Optional[NoiseOperator], noise: NoiseEnsemble) -> np.ndarray:
    """Per-path ``max_i |X(t_i) - x0 + sum lam X dt - sum Phi dt - sum Psi dW|`` (L2 in modes)."""
    X = sol.X
    grid = sol.grid
    dt = grid.widths[None, :, None]
    x0 = np.asarray(x0, dtype=float)
    incr = -model.lam * X[:, :-1] * dt
    if Phi is not None:
        incr = incr + model.to_modes(Phi(model.to_physical(X[:, :-1]))) * dt
    if Psi is not None:
        incr = incr + np.einsum("pjkm,pjm->pjk", Psi.apply(X[:, :-1]), noise.increments)
    rhs = np.concatenate([np.zeros((X.shape[0], 1, model.K)), np.cumsum(incr, axis=1)], axis=1)
    res = X - x0 - rhs
    return np.max(np.sqrt(np.sum(res ** 2, axis=-1)), axis=1)


def exp_convolution_weights(lam: float, grid: Grid):
    """``E0[i, l] = int_{cell l} e^{-lam (t_i - u)} du`` and the first-moment
    weights ``E1[i, l] = int_{cell l} e^{-lam (t_i - u)} (u - t_l) / width_l du``."""
    t = grid.nodes
    N = grid.N
    i, l = np.tril_indices(N + 1, -1)
    a, b, ti = t[l], t[l + 1], t[i]
    h = b - a
    E0 = np.zeros((N + 1, N))
    E1 = np.zeros((N + 1, N))
    if lam == 0:
        E0[i, l] = h
        E1[i, l] = 0.5 * h
        return E0, E1
    eb = np.exp(-lam * (ti - b))
    x = lam * h
    # int_0^h e^{-lam (h - v)} dv = (1 - e^{-x}) / lam ; int v e^{-lam(h-v)} dv / h
    e0 = -np.expm1(-x) / lam
    e1 = (x - (-np.expm1(-x))) / (lam * x)
    E0[i, l] = eb * e0
    E1[i, l] = eb * e1
    return E0, E1


def fbm_convolution_table(lam: float, psi: float, H: float, grid: Grid,
                          mode: str = "cell") -> TriTable:
    """Kernel ``B(t, s) = psi [K_H(t, s) - lam int_s^t K_H(u, s) e^{-lam (t - u)} du]``.

    ``sum_j B[i, j] dW_j`` then discretises ``int_0^t e^{-lam (t - s)} dW_H(s)``.
    ``mode="cell"`` averages over cell ``j`` in ``s`` (the convention of
    :func:`~svolterra.noise.fbm_from_wiener`); the ``u`` integral uses
    product-trapezoid weights that are exact for the exponential.
    ``mode="node"`` evaluates at ``s = t_j`` and needs ``H >= 1/2``; for
    ``H > 1/2`` the kernel is infinite at ``s = 0`` and that column is the
    cell average.
    """
    if not 0 < H < 1:
        raise ConfigurationError(f"Hurst index must lie in (0, 1), got {H!r}")
    N = grid.N
    t = grid.nodes
    out = np.zeros((N + 1, N + 1))
    if mode == "cell":
        W = fbm_weights(H, grid) * grid.widths  # cell integrals W[l, j]
        E0, E1 = exp_convolution_weights(lam, grid)
        inner = E0 @ W[:-1] + E1 @ (W[1:] - W[:-1])
        out[:, :-1] = (W - lam * inner) / grid.widths
    elif mode == "node":
        if H < 0.5:
            raise ConfigurationError("node mode needs H >= 1/2 (K_H is singular otherwise)")
        k = kmod.fbm_kernel(H)
        start = 0
        if H > 0.5:
            # K_H(t, 0) is infinite; the s = 0 column takes the cell average instead
            out[:, 0] = fbm_convolution_table(lam, 1.0, H, grid, "cell").values[:, 0]
            start = 1
        for j in range(start, N):
            s = t[j]
            rows = np.arange(j + 1, N + 1)
            val = k(t[rows], np.full(rows.size, s))
            if lam != 0:
                if H == 0.5:
                    inner = -np.expm1(-lam * (t[rows] - s)) / lam
                else:
                    inner = _exp_inner(k, lam, t, j, H - 0.5)
                val = val - lam * inner
            out[rows, j] = val
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    return TriTable(grid, psi * out, tag=f"fbm-convolution-{mode}")


def _exp_inner(k, lam, t, j, a, n=32):
    """``int_{t_j}^{t_i} k(u, t_j) exp(-lam (t_i - u)) du`` for ``i > j``.

    Fixed Gauss rules per cell (Gauss-Jacobi with weight ``(u - t_j)^a`` on the
    first cell), accumulated by ``inner_{l+1} = exp(-lam dt_l) inner_l + c_l``.
    """
    from scipy.special import roots_jacobi, roots_legendre
    s = t[j]
    xg, wg = roots_legendre(n)
    xj, wj = roots_jacobi(n, 0.0, a)
    lo, hi = t[j:-1], t[j + 1:]
    half = 0.5 * (hi - lo)
    c = np.empty(lo.size)
    # first cell: weight (u - s)^a pulled out of the integrand
    u = s + half[0] * (xj + 1.0)
    f = k(u, np.full(n, s)) / (u - s) ** a * np.exp(-lam * (hi[0] - u))
    c[0] = half[0] ** (1.0 + a) * np.dot(wj, f)
    if lo.size > 1:
        u = 0.5 * (lo[1:] + hi[1:])[:, None] + half[1:, None] * xg[None, :]
        f = k(u.ravel(), np.full(u.size, s)).reshape(u.shape) * np.exp(-lam * (hi[1:, None] - u))
        c[1:] = half[1:] * (f @ wg)
    decay = np.exp(-lam * (hi - lo))
    out = np.empty(lo.size)
    acc = 0.0
    for l in range(lo.size):
        acc = decay[l] * acc + c[l]
        out[l] = acc
    return out


def fbm_convolution_kernel(model: SpectralModel, k: int, psi_k: float, H: float, grid: Grid,
                           mode: str = "cell") -> TriTable:
    """:func:`fbm_convolution_table` for mode ``k`` (1-based) of ``model``."""
    if not 1 <= k <= model.K:
        raise ConfigurationError(f"mode index must lie in 1..{model.K}")
    return fbm_convolution_table(float(model.lam[k - 1]), psi_k, H, grid, mode)

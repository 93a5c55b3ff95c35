"""Stochastic Volterra equations
``X(t) = g(t) + int_0^t A(t, s, X(s)) ds + int_0^t B(t, s, X(s)) dW(s)``.

The drift uses product integration when it is declared separable,
``A = kappa_A(t, s) a(s, x)``, and left-point sums otherwise.  The noise
term is always evaluated at the left node (Ito).  For separable noise
``B = sigma(t, s) b(s, x)`` the weight of cell ``j`` is the root mean
square of ``sigma(t_i, .)`` over the cell, which keeps the Ito isometry
exact per cell even when ``sigma`` is singular on the diagonal.

Paths are processed in fixed chunks of :data:`CHUNK` so results do not
depend on the number of worker threads.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels as kmod
from .errors import ConfigurationError, ConvergenceError
from .kernels import Kernel
from .noise import NoiseEnsemble
from .resolvent import linear_volterra_solve
from .timegrid import Grid

__all__ = [
    "Coefficients", "SolveConfig", "PathResult", "Control", "PicardReport",
    "euler_solve", "picard_solve", "controlled_solve",
    "moment_report", "holder_report", "dependence_experiment", "nonexplosion_report",
    "squared_kernel", "CHUNK",
]

CHUNK = 256
_OVERFLOW = 1e150


def squared_kernel(k: Kernel) -> Kernel:
    """``kappa**2`` as a kernel (singularity exponents doubled)."""
    if 2 * k.alpha >= 1 or 2 * k.beta >= 1:
        raise ConfigurationError(f"{k!r} is not square integrable")
    if k.label == "expconv":
        c, rate = k.params
        return kmod.exp_convolution(c * c, 2.0 * rate)
    if k.label == "constant":
        return kmod.constant(k.params[0] ** 2)
    return Kernel(func=lambda t, s: k.func(t, s) ** 2, label=f"{k.label}^2", params=k.params,
                  alpha=2 * k.alpha, beta=2 * k.beta, singularity=k.singularity,
                  closed_form=False)


def _as_tuple(kernels, d):
    if kernels is None:
        return None
    if isinstance(kernels, Kernel):
        return (kernels,)
    kernels = tuple(kernels)
    if len(kernels) not in (1, d):
        raise ConfigurationError(f"need 1 or d={d} kernels, got {len(kernels)}")
    return kernels


@dataclass(frozen=True, eq=False)
class Coefficients:
    """Coefficients of the stochastic Volterra equation.

    Parameters
    ----------
    d, m : state and noise dimensions.
    g : callable ``g(t) -> (len(t), d)``, an array of node values, or a scalar.
    drift_kernel, drift_fn :
        Separable drift ``kappa_A(t, s) a(s, x)``.  ``drift_kernel`` may be a
        single kernel or one per state component.  ``drift_fn(s, x)`` maps
        ``x`` of shape ``(..., d)`` (with ``s`` broadcast to ``x.shape[:-1]``)
        to ``(..., d)``.
    diffusion_kernel, diffusion_fn :
        Separable noise ``sigma(t, s) b(s, x)``, ``b(s, x) -> (..., d, m)``.
    drift, diffusion :
        General ``A(t, s, x)`` and ``B(t, s, x)`` with scalar ``t``; used when
        no separable form is declared, and spot-checked against it otherwise.
    kappa1, kappa2 : dominating kernels for the growth conditions, when known.
    """

    d: int
    m: int
    g: object
    drift_kernel: object = None
    drift_fn: Optional[Callable] = None
    diffusion_kernel: object = None
    diffusion_fn: Optional[Callable] = None
    drift: Optional[Callable] = None
    diffusion: Optional[Callable] = None
    kappa1: Optional[Kernel] = None
    kappa2: Optional[Kernel] = None
    label: str = "custom"
    params: tuple = ()
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ConfigurationError("dimensions d and m must be positive")
        object.__setattr__(self, "drift_kernel", _as_tuple(self.drift_kernel, self.d))
        object.__setattr__(self, "diffusion_kernel", _as_tuple(self.diffusion_kernel, self.d))
        if (self.drift_kernel is None) != (self.drift_fn is None):
            raise ConfigurationError("separable drift needs both drift_kernel and drift_fn")
        if (self.diffusion_kernel is None) != (self.diffusion_fn is None):
            raise ConfigurationError("separable noise needs both diffusion_kernel and diffusion_fn")
        self.verify_separable()

    @property
    def has_drift(self) -> bool:
        return self.drift_fn is not None or self.drift is not None

    @property
    def has_noise(self) -> bool:
        return self.diffusion_fn is not None or self.diffusion is not None

    def g_values(self, grid: Grid) -> np.ndarray:
        g = self.g
        if callable(g):
            with np.errstate(divide="ignore"):
                g = g(grid.nodes)
        g = np.asarray(g, dtype=float)
        if g.ndim == 0:
            g = np.full((grid.N + 1, self.d), float(g))
        elif g.ndim == 1:
            g = g[:, None] if g.shape[0] == grid.N + 1 else np.broadcast_to(g, (grid.N + 1, self.d))
        return np.broadcast_to(g, (grid.N + 1, self.d)).astype(float)

    def verify_separable(self, n: int = 16, rtol: float = 1e-8) -> None:
        """Compare separable declarations with the general form at random points."""
        rng = np.random.default_rng(20240607)
        t = rng.uniform(0.2, 1.0, n)
        s = t * rng.uniform(0.05, 0.95, n)
        x = rng.normal(size=(n, self.d))
        pairs = []
        if self.drift is not None and self.drift_fn is not None:
            sep = self._sep_eval(self.drift_kernel, self.drift_fn, t, s, x)
            pairs.append(("drift", sep, np.stack([self.drift(t[q], s[q:q + 1], x[q:q + 1])[0]
                                                   for q in range(n)])))
        if self.diffusion is not None and self.diffusion_fn is not None:
            sep = self._sep_eval(self.diffusion_kernel, self.diffusion_fn, t, s, x)
            pairs.append(("diffusion", sep, np.stack([
                self.diffusion(t[q], s[q:q + 1], x[q:q + 1])[0] for q in range(n)])))
        for name, a, b in pairs:
            if not np.allclose(a, b, rtol=rtol, atol=rtol * np.max(np.abs(b), initial=1.0)):
                raise ConfigurationError(f"separable {name} declaration disagrees with {name}()")

    def _sep_eval(self, kernels, fn, t, s, x):
        val = fn(s, x)
        kv = np.stack([k.value(t, s) for k in kernels], axis=-1)  # (n, 1 or d)
        return val * (kv if val.ndim == 2 else kv[..., None])

    # -- weights ---------------------------------------------------------

    def drift_weights(self, grid: Grid) -> np.ndarray:
        """Product-integration weights ``(c, N+1, N)`` with ``c`` in ``{1, d}``."""
        key = ("WA", grid.kind, grid.p, grid.T, grid.N)
        if key not in self._cache:
            self._cache[key] = np.stack([kmod.weight_matrix(k, grid) for k in self.drift_kernel])
        return self._cache[key]

    def noise_weights(self, grid: Grid) -> np.ndarray:
        """Cell-rms weights ``sqrt(int_cell sigma**2 / width)`` with the sign of ``sigma``."""
        key = ("WB", grid.kind, grid.p, grid.T, grid.N)
        if key not in self._cache:
            out = []
            for k in self.diffusion_kernel:
                sq = kmod.weight_matrix(squared_kernel(k), grid)
                sign = np.sign(kmod.weight_matrix(k, grid))
                out.append(sign * np.sqrt(np.clip(sq, 0.0, None) / grid.widths))
            self._cache[key] = np.stack(out)
        return self._cache[key]

    def control_weights(self, grid: Grid) -> np.ndarray:
        """Exact cell integrals of ``sigma`` for the deterministic control term."""
        key = ("WH", grid.kind, grid.p, grid.T, grid.N)
        if key not in self._cache:
            self._cache[key] = np.stack([kmod.weight_matrix(k, grid) for k in self.diffusion_kernel])
        return self._cache[key]


@dataclass(frozen=True)
class SolveConfig:
    """Scheme selection and localisation.

    ``stop_radius`` is the exit radius ``R`` (``inf`` for no stopping);
    ``start_index=1`` starts the recursion at ``t_1`` for data with
    ``g(0) = inf``.  Picard sweeps stop at sup distance ``picard_tol``.
    """

    scheme: str = "euler"
    stop_radius: float = math.inf
    start_index: int = 0
    picard_iters: int = 200
    picard_tol: float = 1e-8
    workers: int = 1

    def __post_init__(self):
        if self.scheme not in ("euler", "picard"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if not self.stop_radius > 0:
            raise ConfigurationError("stop radius must be positive")
        if self.start_index not in (0, 1):
            raise ConfigurationError("start_index must be 0 or 1")
        if self.picard_iters < 1 or self.picard_tol <= 0:
            raise ConfigurationError("picard_iters >= 1 and picard_tol > 0 required")


@dataclass(frozen=True)
class PathResult:
    """Solution paths ``X[p, i, :]`` with stopping information.

    ``tau_index[p]`` is the first node where ``|X| > R`` (``N + 1`` if
    never); from there on the path is frozen at its exit value.  Paths
    that overflowed are frozen at their last finite value and flagged in
    ``overflow``.  With ``start_index = 1`` node 0 holds ``nan``.
    """

    grid: Grid
    X: np.ndarray
    tau_index: np.ndarray
    stop_radius: float
    overflow: np.ndarray
    start_index: int = 0

    @property
    def exploded(self) -> np.ndarray:
        return self.tau_index <= self.grid.N

    @property
    def P(self) -> int:
        return self.X.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# paths grid={self.grid.describe()} R={self.stop_radius}\n")
            w = csv.writer(fh)
            w.writerow(["path", "node", "component", "value", "tau_index"])
            P, n, d = self.X.shape
            for p in range(P):
                for i in range(n):
                    for k in range(d):
                        w.writerow([p, i, k, repr(float(self.X[p, i, k])), int(self.tau_index[p])])


@dataclass(frozen=True)
class Control:
    """Piecewise-constant control ``hdot[j, k]`` on the grid cells.

    When ``radius`` is given the control is an element of the ball of that
    radius and construction fails outside it.
    """

    grid: Grid
    hdot: np.ndarray
    radius: Optional[float] = None

    def __post_init__(self):
        h = np.array(self.hdot, dtype=float)
        if h.ndim == 1:
            h = h[:, None]
        if h.shape[0] != self.grid.N:
            raise ConfigurationError("control needs one row per grid cell")
        if not np.all(np.isfinite(h)):
            raise ConfigurationError("control values must be finite")
        h.setflags(write=False)
        object.__setattr__(self, "hdot", h)
        if self.radius is not None and self.norm() > self.radius * (1 + 1e-12):
            raise ConfigurationError(f"control norm {self.norm():.6g} exceeds ball radius {self.radius}")

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.hdot ** 2 * self.grid.widths[:, None])))

    @classmethod
    def zeros(cls, grid: Grid, m: int) -> "Control":
        return cls(grid, np.zeros((grid.N, m)))

    @classmethod
    def from_coarse(cls, grid: Grid, values, T: Optional[float] = None,
                    radius: Optional[float] = None) -> "Control":
        """Spread ``M`` equal-length coarse cells of ``[0, T]`` onto the grid cells."""
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        M = v.shape[0]
        T = grid.T if T is None else T
        mid = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
        idx = np.minimum((mid / T * M).astype(int), M - 1)
        return cls(grid, v[idx], radius)


# ---------------------------------------------------------------------------
# Euler recursion

def _freeze_check(Xi, prev, R, alive, tau, overflow, i):
    """Apply stopping to node ``i`` values ``Xi`` in place."""
    norm = np.sqrt(np.sum(Xi * Xi, axis=-1))
    bad = ~np.isfinite(norm) | (norm > _OVERFLOW)
    if np.any(bad & alive):
        hit = bad & alive
        Xi[hit] = prev[hit]
        overflow[hit] = True
        tau[hit] = i
        alive &= ~hit
    exit_ = alive & (norm > R)
    if np.any(exit_):
        tau[exit_] = i
        alive &= ~exit_
    return Xi


def _euler_chunk(c: Coefficients, grid: Grid, gv, dW, hdot, eps_scale, cfg):
    N, d, m = grid.N, c.d, c.m
    P = dW.shape[0] if dW is not None else 1
    t = grid.nodes
    X = np.zeros((P, N + 1, d))
    s0 = cfg.start_index
    X[:, :s0 + 1] = gv[None, :s0 + 1]
    if s0:
        X[:, 0] = np.nan
    R = cfg.stop_radius
    tau = np.full(P, N + 1, dtype=int)
    overflow = np.zeros(P, dtype=bool)
    alive = np.ones(P, dtype=bool)
    _freeze_check(X[:, s0], X[:, s0].copy(), R, alive, tau, overflow, s0)
    frozen_at = X[:, s0].copy()

    sep_a = c.drift_fn is not None
    sep_b = c.diffusion_fn is not None
    if sep_a:
        WA = c.drift_weights(grid)
        a_store = np.zeros((P, N, d))
    if c.has_noise:
        if sep_b:
            WB = c.noise_weights(grid)
            WH = c.control_weights(grid) if hdot is not None else None
            y_store = np.zeros((P, N, d))  # b(t_j, X_j) dW_j
            yh_store = np.zeros((P, N, d)) if hdot is not None else None
        else:
            bx_store = []
    use_noise = c.has_noise and dW is not None and eps_scale != 0.0
    with np.errstate(all="ignore"):
        for i in range(s0 + 1, N + 1):
            j = i - 1
            xj = X[:, j]
            sj = np.full(P, t[j])
            # store the left-node quantities of cell j
            if sep_a:
                a_store[:, j] = c.drift_fn(sj, xj)
            if c.has_noise and sep_b:
                bj = c.diffusion_fn(sj, xj)
                if use_noise:
                    y_store[:, j] = np.einsum("pkm,pm->pk", bj, dW[:, j])
                if hdot is not None:
                    yh_store[:, j] = bj @ hdot[j]
            elif c.has_noise:
                bx_store.append(xj.copy())
            xi = gv[i][None, :].repeat(P, axis=0)
            lo = s0
            if sep_a:
                w = WA[:, i, lo:i]  # (c, i - lo)
                xi = xi + _contract(w, a_store[:, lo:i])
            elif c.drift is not None:
                s_arr = np.broadcast_to(t[lo:i], (P, i - lo))
                vals = c.drift(t[i], s_arr, X[:, lo:i])
                xi = xi + np.einsum("j,pjk->pk", grid.widths[lo:i], vals)
            if c.has_noise:
                if sep_b:
                    if use_noise:
                        stoch = _contract(WB[:, i, lo:i], y_store[:, lo:i])
                        xi = xi + (stoch if eps_scale == 1.0 else eps_scale * stoch)
                    if hdot is not None:
                        xi = xi + _contract(WH[:, i, lo:i], yh_store[:, lo:i])
                else:
                    s_arr = np.broadcast_to(t[lo:i], (P, i - lo))
                    Bv = c.diffusion(t[i], s_arr, X[:, lo:i])  # (P, n, d, m)
                    if use_noise:
                        stoch = np.einsum("pjkm,pjm->pk", Bv, dW[:, lo:i])
                        xi = xi + (stoch if eps_scale == 1.0 else eps_scale * stoch)
                    if hdot is not None:
                        xi = xi + np.einsum("pjkm,jm,j->pk", Bv, hdot[lo:i], grid.widths[lo:i])
            was_alive = alive.copy()
            xi = _freeze_check(xi, X[:, j], R, alive, tau, overflow, i)
            frozen_at[was_alive] = xi[was_alive]
            xi[~was_alive] = frozen_at[~was_alive]
            X[:, i] = xi
    return X, tau, overflow


def _contract(w, v):
    """``sum_j w[k, j] v[p, j, k]`` with ``w`` shared (``c == 1``) or per component."""
    if w.shape[0] == 1:
        return np.einsum("j,pjk->pk", w[0], v)
    return np.einsum("kj,pjk->pk", w, v)


def _check_noise(c: Coefficients, noise: Optional[NoiseEnsemble], grid: Grid):
    if noise is None:
        return
    if noise.grid != grid:
        raise ConfigurationError("noise grid differs from the solve grid")
    if noise.m != c.m:
        raise ConfigurationError(f"noise has {noise.m} components, coefficients need {c.m}")


def controlled_solve(c: Coefficients, h: Optional[Control], noise: Optional[NoiseEnsemble],
                     eps: float, cfg: SolveConfig, grid: Optional[Grid] = None) -> PathResult:
    """Euler recursion with an added control term ``sum_j B(t_i, t_j, X_j) hdot_j width_j``
    and the noise scaled by ``sqrt(eps)``.

    With ``eps = 0`` the noise may be omitted; the result then has one path
    (the skeleton).
    """
    if eps < 0:
        raise ConfigurationError("eps must be nonnegative")
    if noise is None and eps > 0 and c.has_noise:
        raise ConfigurationError("noise required when eps > 0")
    if grid is None:
        if noise is not None:
            grid = noise.grid
        elif h is not None:
            grid = h.grid
        else:
            raise ConfigurationError("no grid: pass noise, a control or grid=")
    _check_noise(c, noise, grid)
    hdot = None
    if h is not None:
        if h.grid != grid or h.hdot.shape[1] != c.m:
            raise ConfigurationError("control does not match grid or noise dimension")
        if np.any(h.hdot != 0):
            hdot = np.asarray(h.hdot)
    gv = c.g_values(grid)
    scale = 1.0 if eps == 1 else math.sqrt(eps)
    if noise is None or eps == 0:
        X, tau, ovf = _euler_chunk(c, grid, gv, None, hdot, 0.0, cfg)
        P = noise.P if noise is not None else 1
        if P > 1:
            X, tau, ovf = np.repeat(X, P, 0), np.repeat(tau, P), np.repeat(ovf, P)
        return PathResult(grid, X, tau, cfg.stop_radius, ovf, cfg.start_index)
    dW = noise.increments
    chunks = [slice(a, min(a + CHUNK, noise.P)) for a in range(0, noise.P, CHUNK)]
    run = lambda sl: _euler_chunk(c, grid, gv, dW[sl], hdot, scale, cfg)  # noqa: E731
    if cfg.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(sl) for sl in chunks]
    X = np.concatenate([p[0] for p in parts])
    tau = np.concatenate([p[1] for p in parts])
    ovf = np.concatenate([p[2] for p in parts])
    return PathResult(grid, X, tau, cfg.stop_radius, ovf, cfg.start_index)


def euler_solve(c: Coefficients, noise: NoiseEnsemble, cfg: SolveConfig = SolveConfig()) -> PathResult:
    """Left-point Euler scheme (``controlled_solve`` with no control and ``eps = 1``)."""
    return controlled_solve(c, None, noise, 1.0, cfg)


# ---------------------------------------------------------------------------
# Picard

@dataclass(frozen=True)
class PicardReport:
    sweeps: int
    distances: tuple
    converged: bool


def _picard_map(c: Coefficients, grid: Grid, gv, X, dW, cfg):
    """One sweep: the right-hand side evaluated on the previous iterate."""
    P, N = X.shape[0], grid.N
    t = grid.nodes
    s0 = cfg.start_index
    lo = s0
    out = np.broadcast_to(gv, X.shape).copy()
    Xl = X[:, lo:N]
    s_arr = np.broadcast_to(t[lo:N], Xl.shape[:-1])
    if c.drift_fn is not None:
        a = c.drift_fn(s_arr, Xl)
        WA = c.drift_weights(grid)[:, :, lo:N]
        out += _contract_all(WA, a)
    elif c.drift is not None:
        for i in range(lo + 1, N + 1):
            vals = c.drift(t[i], s_arr[:, :i - lo], Xl[:, :i - lo])
            out[:, i] += np.einsum("j,pjk->pk", grid.widths[lo:i], vals)
    if c.has_noise and dW is not None:
        if c.diffusion_fn is not None:
            b = c.diffusion_fn(s_arr, Xl)
            y = np.einsum("pjkm,pjm->pjk", b, dW[:, lo:N])
            WB = c.noise_weights(grid)[:, :, lo:N]
            out += _contract_all(WB, y)
        else:
            for i in range(lo + 1, N + 1):
                Bv = c.diffusion(t[i], s_arr[:, :i - lo], Xl[:, :i - lo])
                out[:, i] += np.einsum("pjkm,pjm->pk", Bv, dW[:, lo:i])
    if s0:
        out[:, 0] = np.nan
    return out


def _contract_all(W, v):
    """``out[p, i, k] = sum_j W[k or 0, i, j] v[p, j, k]``."""
    if W.shape[0] == 1:
        return np.einsum("ij,pjk->pik", W[0], v)
    return np.einsum("kij,pjk->pik", W, v)


def _apply_stopping(X, R, N, s0):
    P = X.shape[0]
    tau = np.full(P, N + 1, dtype=int)
    overflow = np.zeros(P, dtype=bool)
    with np.errstate(invalid="ignore", over="ignore"):
        norm = np.sqrt(np.sum(X[:, s0:] ** 2, axis=-1))
    bad = ~np.isfinite(norm) | (norm > _OVERFLOW)
    hit = bad | (norm > R)
    X = X.copy()
    for p in np.nonzero(hit.any(axis=1))[0]:
        i = int(np.argmax(hit[p])) + s0
        tau[p] = i
        if bad[p, i - s0]:
            overflow[p] = True
            X[p, i:] = X[p, i - 1]
        else:
            X[p, i + 1:] = X[p, i]
    return X, tau, overflow


def picard_solve(c: Coefficients, noise: NoiseEnsemble, cfg: SolveConfig):
    """Picard iteration on the discrete equation with the same increments each sweep.

    Starts from ``X = g`` and stops when the sup over nodes and paths of the
    change between sweeps drops below ``cfg.picard_tol``.

    Returns
    -------
    (PathResult, PicardReport)

    Raises
    ------
    ConvergenceError
        If ``cfg.picard_iters`` sweeps do not reach the tolerance; the
        record holds the distance history.
    """
    grid = noise.grid
    _check_noise(c, noise, grid)
    gv = c.g_values(grid)
    N, s0 = grid.N, cfg.start_index
    dW = noise.increments
    X = np.broadcast_to(gv, (noise.P, N + 1, c.d)).copy()
    if s0:
        X[:, 0] = np.nan
    X, _, _ = _apply_stopping(X, cfg.stop_radius, N, s0)
    hist = []
    for sweep in range(1, cfg.picard_iters + 1):
        with np.errstate(all="ignore"):
            Xn = _picard_map(c, grid, gv, X, dW, cfg)
        Xn, tau, ovf = _apply_stopping(Xn, cfg.stop_radius, N, s0)
        dist = float(np.nanmax(np.abs(Xn[:, s0:] - X[:, s0:])))
        hist.append(dist)
        X = Xn
        if dist < cfg.picard_tol:
            res = PathResult(grid, X, tau, cfg.stop_radius, ovf, s0)
            return res, PicardReport(sweep, tuple(hist), True)
        if not np.isfinite(dist):
            break
    raise ConvergenceError(f"Picard sweeps did not contract below {cfg.picard_tol:g} "
                           f"in {len(hist)} sweeps", hist)


# ---------------------------------------------------------------------------
# diagnostics

@dataclass(frozen=True)
class MomentReport:
    """Empirical ``E|X(t_i)|^p`` with normal-theory 95% intervals.

    ``bound`` holds the Gronwall-chain envelope (``nan`` when no growth
    kernels are declared) and ``bounded`` the verdict ``estimate <= 10 bound``.
    ``omitted`` lists nodes with fewer than ``min_paths`` unstopped paths.
    """

    p: float
    nodes: np.ndarray
    mean: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    bound: np.ndarray
    bounded: Optional[bool]
    fitted_constant: Optional[float]
    omitted: tuple


def _growth_kernel(c: Coefficients) -> Optional[Kernel]:
    ks = []
    if c.kappa1 is not None:
        ks.append(c.kappa1)
    if c.kappa2 is not None:
        ks.append(squared_kernel(c.kappa2))
    if not ks:
        return None
    alpha = max(k.alpha for k in ks)
    beta = max(k.beta for k in ks)
    return Kernel(func=lambda t, s: sum(k.func(t, s) for k in ks), label="growth",
                  alpha=alpha, beta=beta, singularity="algebraic" if alpha or beta else "none",
                  closed_form=False)


def moment_report(r: PathResult, p_list: Sequence[float], c: Optional[Coefficients] = None,
                  min_paths: int = 100) -> list:
    """Moments ``E|X(t_i)|^p`` per node for each ``p`` in ``p_list``.

    With growth kernels declared on ``c``, the bound is the solution of
    ``v = C (1 + |g|^p) + C int (kappa1 + kappa2**2) v`` where ``C`` is the
    smallest constant making the same inequality hold for the estimates
    themselves (the continuum constants are only known to exist, so they are fitted).
    """
    grid = r.grid
    N = grid.N
    norms = np.sqrt(np.sum(r.X ** 2, axis=-1))
    alive = np.arange(N + 1)[None, :] < r.tau_index[:, None]
    K = _growth_kernel(c) if c is not None else None
    out = []
    for p in p_list:
        if p < 2:
            raise ConfigurationError("moment exponents must be >= 2")
        mean = np.full(N + 1, np.nan)
        lo = np.full(N + 1, np.nan)
        hi = np.full(N + 1, np.nan)
        omitted = []
        for i in range(r.start_index, N + 1):
            v = norms[alive[:, i], i] ** p
            if v.size < min_paths:
                omitted.append(i)
                continue
            mu = v.mean()
            se = v.std(ddof=1) / math.sqrt(v.size)
            mean[i], lo[i], hi[i] = mu, mu - 1.96 * se, mu + 1.96 * se
        bound = np.full(N + 1, np.nan)
        bounded, C = None, None
        if K is not None:
            gn = np.sqrt(np.sum(c.g_values(grid) ** 2, axis=-1)) ** p
            base = 1.0 + gn
            ok = np.isfinite(mean)
            u = np.where(ok, mean, 0.0)
            W = kmod.weight_matrix(K, grid)
            rhs = base + W @ u[:-1]
            C = float(max(1.0, np.max(u[ok] / rhs[ok]))) if ok.any() else 1.0
            KC = Kernel(func=lambda t, s: C * K.func(t, s), label="growth", alpha=K.alpha,
                        beta=K.beta, closed_form=False)
            bound = linear_volterra_solve(C * base, KC, grid)
            bounded = bool(np.all(mean[ok] <= 10.0 * bound[ok]))
        out.append(MomentReport(float(p), np.arange(N + 1), mean, lo, hi, bound, bounded, C,
                                tuple(omitted)))
    return out


@dataclass(frozen=True)
class HolderEstimate:
    exponent: float
    ci_lo: float
    ci_hi: float
    lags: np.ndarray
    moments: np.ndarray


def holder_report(r, p: float = 2.0, lags: Optional[Sequence[int]] = None,
                  component: int = 0, n_boot: int = 200, seed: int = 0) -> HolderEstimate:
    """Hölder exponent from ``log E|X(t + delta) - X(t)|^p`` against ``log delta``.

    ``r`` is a :class:`PathResult`, a noise ensemble, or an array of path
    values ``(P, N + 1)``.  Lags default to the dyadic ``1, 2, 4, ..., N/8``
    cells; the slope divided by ``p`` is the estimate and a path bootstrap
    gives the 95% band.
    """
    if isinstance(r, PathResult):
        X, grid = r.X[:, :, component], r.grid
    elif isinstance(r, NoiseEnsemble):
        X, grid = r.paths()[:, :, component], r.grid
    else:
        raise ConfigurationError("holder_report needs a PathResult or NoiseEnsemble")
    if not grid.is_uniform or grid.N < 256 or X.shape[0] < 100:
        raise ConfigurationError("holder_report needs a uniform grid with N >= 256 and P >= 100")
    N = grid.N
    if lags is None:
        lags = [2 ** k for k in range(int(math.log2(N // 8)) + 1)]
    lags = np.asarray(lags, dtype=int)
    # per-path mean of |increment|^p at each lag
    per_path = np.stack([np.mean(np.abs(X[:, l:] - X[:, :-l]) ** p, axis=1) for l in lags], 1)
    logd = np.log(lags * grid.widths[0])

    def slope(rows):
        m = per_path[rows].mean(axis=0)
        if np.any(m <= 0):
            return math.inf
        return np.polyfit(logd, np.log(m), 1)[0] / p

    est = slope(slice(None))
    rng = np.random.default_rng(seed)
    P = X.shape[0]
    boots = np.array([slope(rng.integers(0, P, P)) for _ in range(n_boot)])
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return HolderEstimate(float(est), float(lo), float(hi), lags, per_path.mean(axis=0))


@dataclass(frozen=True)
class DependenceRow:
    m: int
    eps: float
    probability: float
    ci_lo: float
    ci_hi: float
    sup_distance_median: float


def wilson_interval(k: int, n: int, z: float = 1.96):
    if n == 0:
        return 0.0, 1.0
    ph = k / n
    den = 1 + z * z / n
    centre = (ph + z * z / (2 * n)) / den
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def dependence_experiment(c_seq: Sequence[Coefficients], c: Coefficients, noise: NoiseEnsemble,
                          cfg: SolveConfig, eps_levels: Sequence[float],
                          m_values: Optional[Sequence[int]] = None) -> list:
    """Coupled exceedance ``P(max_i |X_m(t_i) - X(t_i)| >= eps)`` on shared noise."""
    base = euler_solve(c, noise, cfg)
    rows = []
    m_values = list(m_values) if m_values is not None else list(range(1, len(c_seq) + 1))
    for m, cm in zip(m_values, c_seq):
        if cm.d != c.d or cm.m != c.m:
            raise ConfigurationError("all coefficient sets must share d and m")
        Xm = euler_solve(cm, noise, cfg)
        diff = Xm.X[:, cfg.start_index:] - base.X[:, cfg.start_index:]
        sup = np.max(np.sqrt(np.sum(diff ** 2, axis=-1)), axis=1)
        for e in eps_levels:
            k = int(np.sum(sup >= e))
            lo, hi = wilson_interval(k, noise.P)
            rows.append(DependenceRow(int(m), float(e), k / noise.P, lo, hi, float(np.median(sup))))
    return rows


@dataclass(frozen=True)
class NonexplosionReport:
    radii: tuple
    fractions: tuple
    tau: np.ndarray  # (len(radii), P)

    @property
    def nested(self) -> bool:
        """``tau(R') >= tau(R)`` path by path for ``R' > R``."""
        return bool(np.all(np.diff(self.tau, axis=0) >= 0))


def nonexplosion_report(c: Coefficients, noise: NoiseEnsemble, radii: Sequence[float],
                        cfg: SolveConfig = SolveConfig()) -> NonexplosionReport:
    """Fraction of paths leaving the ball of radius ``R`` before ``T``, per ``R``."""
    if c.kappa1 is None:
        raise ConfigurationError("nonexplosion_report needs the kappa1 growth kernel declared")
    radii = tuple(float(R) for R in radii)
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ConfigurationError("radii must be strictly increasing")
    taus, fr = [], []
    for R in radii:
        res = euler_solve(c, noise, SolveConfig(stop_radius=R, start_index=cfg.start_index,
                                                workers=cfg.workers))
        taus.append(res.tau_index)
        fr.append(float(np.mean(res.exploded)))
    return NonexplosionReport(radii, tuple(fr), np.array(taus))

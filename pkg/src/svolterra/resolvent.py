"""Resolvent kernels, Volterra-Gronwall bounds and deterministic linear solvers.

Tables are cell-averaged in the second argument: ``values[i, j]`` for
``j < i`` approximates the mean of ``r(t_i, .)`` over cell ``j``.  With
``r_1 = W / width`` the discrete series reproduces the powers of the
product-integration matrix ``W`` exactly, so the Gronwall bound and the
forward-substitution solver agree to rounding.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from . import kernels as kmod
from .errors import ConfigurationError, ConvergenceError, DomainError, NotInClassError
from .kernels import Kernel
from .timegrid import Grid

__all__ = [
    "TriTable", "ResolventTable", "GronwallBound", "FixedPointResult", "ConvolutionResolvent",
    "iterated_kernels", "resolvent_sum", "identity_residual", "convolution_resolvent",
    "gronwall_bound", "linear_volterra_solve", "material_resolvent", "fractional_kernel",
]

OVERFLOW_GUARD = 1e150


@dataclass(frozen=True)
class TriTable:
    """Lower-triangular table ``values[i, j]``, ``0 <= j <= i <= N``.

    The strict upper triangle is zero and the diagonal is unused for
    singular kernels (``tag`` says how entries are to be read).
    """

    grid: Grid
    values: np.ndarray
    tag: str = "cell-average"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        n = self.grid.N + 1
        if v.shape != (n, n):
            raise ConfigurationError(f"table shape {v.shape} does not match grid with {n} nodes")
        if not np.all(np.isfinite(v)):
            raise DomainError("table values must be finite")
        v[np.triu_indices(n, 1)] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, ij):
        i, j = ij
        if j > i:
            raise IndexError("TriTable is indexable on the lower triangle only")
        return self.values[i, j]

    def row_integrals(self) -> np.ndarray:
        """``int_0^{t_i} r(t_i, s) ds`` per node."""
        return self.values[:, :-1] @ self.grid.widths if self.grid.N else np.zeros(1)

    def rows(self):
        t = self.grid.nodes
        for i in range(self.grid.N + 1):
            for j in range(i + 1):
                yield i, j, t[i], t[j], self.values[i, j]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.tag} table on {self.grid.describe()}\n")
            w = csv.writer(fh)
            w.writerow(["i", "j", "t_i", "t_j", "value"])
            for i, j, ti, tj, v in self.rows():
                w.writerow([i, j, repr(float(ti)), repr(float(tj)), repr(float(v))])

    @classmethod
    def from_csv(cls, path, grid: Grid, tag: str = "cell-average") -> "TriTable":
        v = np.zeros((grid.N + 1, grid.N + 1))
        with open(path) as fh:
            rows = csv.DictReader(line for line in fh if not line.startswith("#"))
            for row in rows:
                v[int(row["i"]), int(row["j"])] = float(row["value"])
        return cls(grid, v, tag)


@dataclass(frozen=True)
class ResolventTable:
    """Truncated resolvent series with its decay record."""

    table: TriTable
    terms_used: int
    tail_bound: float
    decay: tuple
    kernel_label: str = ""
    fit: Optional[dict] = None

    @property
    def grid(self) -> Grid:
        return self.table.grid

    @property
    def values(self) -> np.ndarray:
        return self.table.values

    def to_csv(self, path) -> None:
        self.table.to_csv(path)

    def summary(self) -> dict:
        out = {"kernel": self.kernel_label, "terms_used": self.terms_used,
               "tail_bound": self.tail_bound}
        if self.fit:
            out.update(self.fit)
        return out


def _first_table(k: Kernel, grid: Grid) -> np.ndarray:
    W = kmod.weight_matrix(k, grid)
    r1 = np.zeros((grid.N + 1, grid.N + 1))
    r1[:, :-1] = W / grid.widths
    return r1


def _next_term(W: np.ndarray, r: np.ndarray) -> np.ndarray:
    # r_{n+1}[i, j] = sum_{j < l < i} W[i, l] r_n[l, j]; W is strictly lower and
    # r_n[l, j] vanishes for l <= j, so the plain product already has that support.
    out = np.zeros_like(r)
    out[:, :-1] = W @ r[:-1, :-1]
    return out


def iterated_kernels(k: Kernel, grid: Grid, n_max: int) -> list:
    """Tables of ``r_1, ..., r_{n_max}`` (cell-averaged in ``s``)."""
    if int(n_max) != n_max or n_max < 1:
        raise ConfigurationError("n_max must be a positive integer")
    _check_integrable(k)
    W = kmod.weight_matrix(k, grid)
    r = _first_table(k, grid)
    out = [TriTable(grid, r)]
    for _ in range(int(n_max) - 1):
        r = _next_term(W, r)
        out.append(TriTable(grid, r))
    return out


def _check_integrable(k: Kernel):
    if k.alpha >= 1 or k.beta >= 1:
        raise DomainError(f"{k!r} is not integrable on the diagonal or at the origin")


def _fit_decay(decay: Sequence[float]) -> Optional[dict]:
    """Least-squares fit of ``log m_n = log C + log n + n log gamma`` on the second half."""
    m = np.asarray(decay, dtype=float)
    n = np.arange(1, m.size + 1)
    keep = (m > 0) & (n > m.size // 2)
    if keep.sum() < 2:
        return None
    y = np.log(m[keep]) - np.log(n[keep])
    slope, icpt = np.polyfit(n[keep], y, 1)
    return {"C": float(np.exp(icpt)), "gamma": float(np.exp(slope))}


def resolvent_sum(k: Kernel, grid: Grid, tol: float = 1e-10, n_cap: int = 400,
                  force: bool = False, T_classify: Optional[float] = None) -> ResolventTable:
    """Sum the iterated-kernel series until the integrated term drops below ``tol``.

    The stopping quantity is ``max_i int_0^{t_i} r_n(t_i, s) ds``.  Unless
    ``force`` is set, kernels classified outside the resolvent class are
    rejected up front with :class:`NotInClassError`.

    Raises
    ------
    ConvergenceError
        When ``n_cap`` is reached, or the stopping quantity has not decreased
        over the last three terms after the first few, or overflows.
    """
    _check_integrable(k)
    if not force:
        report = kmod.classify(k, T=T_classify or grid.T)
        if report.verdict == "not-in-K":
            raise NotInClassError(f"{k!r} is not in the resolvent class; pass force=True "
                                  "to attempt the series anyway", report=report)
    W = kmod.weight_matrix(k, grid)
    r = _first_table(k, grid)
    total = r.copy()
    decay = []
    for n in range(1, int(n_cap) + 1):
        m = float(np.max(r[:, :-1] @ grid.widths))
        decay.append(m)
        if m < tol:
            fit = _fit_decay(decay)
            return ResolventTable(TriTable(grid, total), n, m, tuple(decay), repr(k), fit)
        if not np.isfinite(m) or m > OVERFLOW_GUARD:
            raise ConvergenceError(f"resolvent series for {k!r} overflowed at n={n}", decay)
        if n >= 8 and decay[-1] >= decay[-2] >= decay[-3] >= decay[-4]:
            raise ConvergenceError(
                f"resolvent series for {k!r} shows no decay by n={n} (last term {m:.3g})", decay)
        r = _next_term(W, r)
        total += r
    raise ConvergenceError(f"resolvent series for {k!r} not below tol={tol:g} by n_cap={n_cap}",
                           decay)


def identity_residual(k: Kernel, R: ResolventTable, margin: Optional[float] = None) -> float:
    """Defect of the resolvent identity ``r = kappa + kappa * r = kappa + r * kappa``.

    Both compositions are re-evaluated with rules independent of the one
    that built ``R`` (product trapezoid in ``u`` for ``kappa * r``, exact
    first-argument cell integrals for ``r * kappa``) and compared against the
    cell-averaged kernel.  Entries within ``margin`` of the diagonal or of
    ``s = 0`` are skipped for singular kernels (default ``0.1 T``).  Returns
    the larger of the two maximal absolute defects.
    """
    grid = R.grid
    t, N = grid.nodes, grid.N
    if margin is None:
        margin = 0.1 * grid.T if (k.alpha > 0 or k.beta > 0) else 0.0
    r = R.values
    W = kmod.weight_matrix(k, grid)
    A, M1 = kmod.trapezoid_weights(k, grid)
    kbar = np.zeros_like(r)
    kbar[:, :-1] = W / grid.widths

    tol = 1e-12 * grid.T
    res_a = res_b = 0.0
    for j in range(N):
        if t[j] < margin - tol:
            continue
        rows = np.nonzero(t - t[j] >= max(margin, t[j + 1] - t[j]) - tol)[0]
        rows = rows[rows > j + 1]
        if rows.size == 0:
            continue
        col = r[:, j]
        # kappa * r: first cell frozen at its right node (r is not defined on the diagonal)
        comp_a = W[rows, j] * col[j + 1]
        lsl = slice(j + 1, N)
        comp_a = comp_a + A[rows, lsl] @ col[j + 1:N] + M1[rows, lsl] @ col[j + 2:N + 1]
        res_a = max(res_a, float(np.max(np.abs(col[rows] - kbar[rows, j] - comp_a))))
        # r * kappa: integrate kappa(u, t_j) exactly over each u-cell
        cells = np.arange(j, N)
        F = kmod.cell_integrals_first(k, np.full(cells.size, t[j]), t[cells], t[cells + 1])
        comp_b = r[rows][:, j:N] @ F
        res_b = max(res_b, float(np.max(np.abs(col[rows] - kbar[rows, j] - comp_b))))
    return max(res_a, res_b)


@dataclass(frozen=True)
class GronwallBound:
    """Volterra-Gronwall bound on the grid nodes.

    ``origin_excluded`` is set when ``g(0)`` was not finite; the bound is
    then reported on nodes ``i >= 1`` only (``values[0]`` is ``inf``) and the
    first cell uses ``g(t_1)``.
    """

    values: np.ndarray
    origin_excluded: bool = False


def _on_grid(g, grid: Grid) -> np.ndarray:
    if callable(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            g = g(grid.nodes)
    g = np.broadcast_to(np.asarray(g, dtype=float), (grid.N + 1,)).copy()
    return g


def gronwall_bound(g, k: Kernel, R: ResolventTable) -> GronwallBound:
    """``t_i -> g(t_i) + sum_j width_j r(t_i, t_j) g(t_j)``."""
    grid = R.grid
    gv = _on_grid(g, grid)
    excluded = not np.isfinite(gv[0])
    if excluded:
        gv[0] = gv[1]
    if np.any(gv[1:] < 0) or not np.all(np.isfinite(gv[1:])):
        raise DomainError("gronwall_bound needs g >= 0 and finite on nodes i >= 1")
    out = gv + R.values[:, :-1] @ (grid.widths * gv[:-1])
    if excluded:
        out[0] = np.inf
    return GronwallBound(out, excluded)


@dataclass(frozen=True)
class FixedPointResult:
    """Outcome of seeded fixed-point sweeps for ``x = g + K x``."""

    values: np.ndarray
    converged: bool
    sweeps: int
    residual: float
    history: tuple = ()

    def nearest(self, candidates: dict) -> str:
        """Name of the candidate function closest in sup norm."""
        best, name = np.inf, ""
        for key, arr in candidates.items():
            d = float(np.max(np.abs(self.values - np.asarray(arr))))
            if d < best:
                best, name = d, key
        return name


def _forward_substitution(gv, W):
    x = np.empty_like(gv)
    x[0] = gv[0]
    for i in range(1, gv.size):
        x[i] = gv[i] + W[i, :i] @ x[:i]
    return x


def _trapezoid_apply(A, M1, x):
    return A @ x[:-1] + M1 @ x[1:]


def linear_volterra_solve(g, k: Kernel, grid: Grid, seed=None, damping: float = 0.5,
                          tol: float = 1e-8, max_sweeps: int = 5000,
                          divergence: float = 1e8) -> Union[np.ndarray, FixedPointResult]:
    """Solve ``x(t) = g(t) + int_0^t kappa(t, s) x(s) ds`` on the grid.

    Without ``seed`` this is explicit forward substitution with left-node
    product integration and returns the node values.  With a seed the
    equation is treated as a fixed-point problem: damped sweeps
    ``x <- (1 - damping) x + damping (g + K x)`` with product-trapezoid
    weights run until the fixed-point residual ``max|g + K x - x|`` drops
    below ``tol * max(1, max|x|)``.  No uniqueness is claimed; the result
    reports where the seed ended up.

    Raises
    ------
    ConvergenceError
        If the sweeps diverge (iterates exceed ``divergence`` times the seed
        scale or become non-finite).
    """
    gv = _on_grid(g, grid)
    if seed is None:
        return _forward_substitution(gv, kmod.weight_matrix(k, grid))
    if not 0 < damping <= 1:
        raise ConfigurationError("damping must lie in (0, 1]")
    A, M1 = kmod.trapezoid_weights(k, grid)
    x = _on_grid(seed, grid)
    scale = max(1.0, float(np.max(np.abs(x))))
    history = []
    for sweep in range(int(max_sweeps) + 1):
        Fx = gv + _trapezoid_apply(A, M1, x)
        res = float(np.max(np.abs(Fx - x)))
        history.append(res)
        if res <= tol * max(1.0, float(np.max(np.abs(x)))):
            return FixedPointResult(x, True, sweep, res, tuple(history))
        if sweep == max_sweeps:
            break
        x = (1.0 - damping) * x + damping * Fx
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > divergence * scale:
            raise ConvergenceError(f"fixed-point sweeps for {k!r} diverged at sweep {sweep + 1}",
                                   history)
    return FixedPointResult(x, False, int(max_sweeps), history[-1], tuple(history))


@dataclass(frozen=True)
class ConvolutionResolvent:
    """Node values of the convolution resolvent ``a = h + h * a``.

    ``blowup`` is set when ``|a|`` crossed the overflow guard; values past
    that node are ``nan``.  ``partial_integrals[i]`` approximates
    ``int_0^{t_i} a``.
    """

    grid: Grid
    values: np.ndarray
    blowup: bool
    blowup_index: Optional[int]
    partial_integrals: np.ndarray


def _as_convolution(h) -> Kernel:
    if isinstance(h, Kernel):
        if not h.is_convolution:
            raise ConfigurationError(f"{h!r} is not a convolution kernel")
        return h
    if callable(h):
        return kmod.convolution(h)
    raise ConfigurationError("expected a convolution Kernel or a profile callable")


def _self_convolution(k: Kernel, t: float, v_max: float = 60.0) -> float:
    """``(h * h)(t) = 2 int_0^{t/2} h(t - s) h(s) ds`` with ``s = (t/2) e^{-v}``.

    The substitution turns the singularity of ``h`` at 0 into a decaying
    tail in ``v``.  Beyond ``v_max`` the factor ``h(t - s)`` is frozen at
    ``h(t)`` and the remaining ``int_0^{s_max} h`` is taken exactly, which
    matters for slowly decaying (logarithmic) singularities.
    """
    half = 0.5 * t
    ht = float(k.profile(t))

    def f(v):
        s = half * math.exp(-v)
        return float(k.profile(t - s)) * float(k.profile(s)) * s

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(f, 0.0, v_max, limit=400, epsabs=1e-13, epsrel=1e-11)
    s_max = half * math.exp(-v_max)
    tail = ht * float(kmod.cell_integrals(k, s_max, 0.0, s_max))
    return 2.0 * (val + tail)


def _self_convolution_mass(k: Kernel, x: float, v_max: float = 60.0) -> float:
    """``int_0^x (h * h)`` by the same logarithmic substitution ``y = x e^{-v}``."""
    def f(v):
        y = x * math.exp(-v)
        return _self_convolution(k, y) * y

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(f, 0.0, v_max, limit=200, epsabs=1e-13, epsrel=1e-9)
    y_max = x * math.exp(-v_max)
    return val + float(kmod.cell_integrals(k, y_max, 0.0, y_max)) ** 2


def convolution_resolvent(h, grid: Grid, guard: float = 1e12) -> ConvolutionResolvent:
    """Forward time-stepping for ``a(t) = h(t) + int_0^t h(t - s) a(s) ds``.

    Bounded profiles use the implicit product-trapezoid rule (second order).
    A profile singular at 0 makes ``a`` singular there too; then ``a = h + b``
    is split off and ``b = h * h + h * b`` is stepped instead, whose forcing
    ``h * h`` is one singularity order smoother.  The first cell, where
    ``b`` may still be singular, enters through its exact forcing mass
    ``int_0^{t_1} h * h``.  ``a(t_0)`` is reported as ``inf`` in that case.
    """
    k = _as_convolution(h)
    _check_integrable(k)
    t, N = grid.nodes, grid.N
    w = grid.widths
    hv = np.empty(N + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        hv[:] = k.profile(t)
    singular = k.alpha > 0 or not np.isfinite(hv[0])
    A, M1 = kmod.trapezoid_weights(k, grid)
    b = np.full(N + 1, np.nan)
    blow = None
    if singular:
        W = kmod.weight_matrix(k, grid)
        f = np.empty(N + 1)
        f[0] = np.nan
        f[1:] = [_self_convolution(k, ti) for ti in t[1:]]
        F1 = _self_convolution_mass(k, t[1])
        # int_0^{t_1} b = F1 + (h * b) part, the latter vanishing at 0
        b[1] = (f[1] + W[1, 0] / w[0] * (F1 - 0.5 * w[0] * f[1])) / (1.0 - 0.5 * W[1, 0])
        mass0 = F1 + 0.5 * w[0] * (b[1] - f[1])
        for i in range(2, N + 1):
            acc = f[i] + W[i, 0] / w[0] * mass0 + A[i, 1:i] @ b[1:i] + M1[i, 1:i - 1] @ b[2:i]
            b[i] = acc / (1.0 - M1[i, i - 1])
            if not abs(b[i]) < guard:
                blow = i
                break
    else:
        b[0] = hv[0]
        for i in range(1, N + 1):
            acc = hv[i] + A[i, :i] @ b[:i] + M1[i, :i - 1] @ b[1:i]
            b[i] = acc / (1.0 - M1[i, i - 1])
            if not abs(b[i]) < guard:
                blow = i
                break
    if blow is not None:
        b[blow:] = np.nan
    if singular:
        a = hv + b
        a[0] = np.inf
        h_int = np.concatenate([[0.0], kmod.cell_integrals(k, t[1:], np.zeros(N), t[1:])])
        b_int = np.concatenate([[0.0, mass0], mass0 + np.cumsum(0.5 * w[1:] * (b[1:-1] + b[2:]))])
        partial = h_int + b_int
    else:
        a = b
        partial = np.concatenate([[0.0], np.cumsum(0.5 * w * (a[:-1] + a[1:]))])
    return ConvolutionResolvent(grid, a, blow is not None, blow, partial)


def material_resolvent(a, lam: float, grid: Grid) -> np.ndarray:
    """Scalar resolvent ``s(t) = 1 - lam int_0^t a(t - u) s(u) du``.

    ``a`` is a convolution kernel (or profile); its singularity at 0 is
    absorbed by product-trapezoid weights, so graded grids resolve the
    non-smooth start of ``s``.
    """
    if lam < 0:
        raise ConfigurationError("lam must be nonnegative")
    k = _as_convolution(a)
    _check_integrable(k)
    N = grid.N
    s = np.empty(N + 1)
    s[0] = 1.0
    if lam == 0:
        s[:] = 1.0
        return s
    A, M1 = kmod.trapezoid_weights(k, grid)
    for i in range(1, N + 1):
        acc = A[i, :i] @ s[:i] + M1[i, :i - 1] @ s[1:i]
        s[i] = (1.0 - lam * acc) / (1.0 + lam * M1[i, i - 1])
    return s


def fractional_kernel(alpha: float) -> Kernel:
    """Convolution kernel ``a_alpha(u) = u**(alpha - 1) / Gamma(alpha)``, ``0 < alpha <= 1``."""
    if not 0 < alpha <= 1:
        raise ConfigurationError("fractional order must lie in (0, 1]")
    if alpha == 1:
        return kmod.constant(1.0)
    return kmod.power(1.0 / math.gamma(alpha), 1.0 - alpha, 0.0)

"""Two-time kernels on the triangle ``{(t, s): s < t}``.

A :class:`Kernel` bundles a vectorised evaluation ``value(t, s)`` with
singularity metadata (an algebraic exponent ``alpha`` at ``s = t`` and
``beta`` at ``s = 0``) and, where known, closed-form cell integrals and
first moments.  Everything downstream (resolvents, SDE drift weights,
fBm) goes through :func:`cell_integrals` / :func:`weight_matrix`, which
fall back to Gauss-Jacobi rules that absorb the declared endpoint
singularities.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special
from scipy.interpolate import PchipInterpolator

from .errors import ConfigurationError, DomainError
from .timegrid import Grid

__all__ = [
    "Kernel", "KernelClassReport", "PaleyWienerResult",
    "constant", "separable_h", "convolution", "power", "circle", "semigroup",
    "loglog", "fbm_kernel", "exp_convolution", "zero",
    "cell_integral", "cell_integrals", "cell_moments", "cell_integrals_first",
    "weight_matrix", "trapezoid_weights", "classify", "paley_wiener_check",
    "fbm_constant", "KERNEL_REGISTRY", "kernel_from_label",
]

_GL_POINTS = 16
_GJ_POINTS = 20
_ORIGIN_LEVELS = 14


@dataclass(frozen=True)
class Kernel:
    """A nonnegative kernel ``kappa(t, s)`` on ``s < t``.

    Parameters
    ----------
    func : callable
        Vectorised ``func(t, s)`` valid for ``0 <= s < t`` (it may return
        ``inf`` at a declared singular point).
    label, params : identification used by the CLI and reports.
    alpha, beta : float
        Algebraic singularity exponents at ``s = t`` and at ``s = 0``;
        ``func * (t-s)**alpha * s**beta`` must be bounded near those points.
    singularity : {"none", "algebraic", "custom"}
    integral : callable, optional
        Closed form ``integral(t, a, b) = int_a^b kappa(t, s) ds``.
    moment : callable, optional
        Closed form ``int_a^b kappa(t, s) (s - a) ds / (b - a)``.
    modulus : callable, optional
        Increment modulus ``lambda(t2, t, s)`` bounding ``|kappa(t2,s) - kappa(t,s)|``.
    profile : callable, optional
        ``h`` when ``kappa(t, s) = h(t - s)``.
    """

    func: Callable
    label: str
    params: tuple = ()
    alpha: float = 0.0
    beta: float = 0.0
    singularity: str = "none"
    integral: Optional[Callable] = None
    moment: Optional[Callable] = None
    modulus: Optional[Callable] = None
    profile: Optional[Callable] = None
    closed_form: bool = True
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def is_convolution(self) -> bool:
        return self.profile is not None

    def value(self, t, s):
        """Unmasked evaluation (caller guarantees ``s < t``)."""
        return self.func(np.asarray(t, dtype=float), np.asarray(s, dtype=float))

    def __call__(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        t, s = np.broadcast_arrays(t, s)
        out = np.zeros(t.shape)
        inside = s < t
        if np.any(inside):
            with np.errstate(divide="ignore", invalid="ignore"):
                out[inside] = self.func(t[inside], s[inside])
        return out if out.ndim else float(out)

    def __repr__(self):
        args = ", ".join(repr(p) for p in self.params)
        return f"{self.label}({args})"


# ---------------------------------------------------------------------------
# quadrature rules

@lru_cache(maxsize=None)
def _jacobi_rule(n: int, a: float, b: float):
    """Nodes/weights on [-1, 1] for weight (1-x)**a (1+x)**b."""
    if a == 0 and b == 0:
        x, w = np.polynomial.legendre.leggauss(n)
    else:
        x, w = special.roots_jacobi(n, a, b)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _gauss_jacobi(f, t, a, b, right_exp, left_exp, n, weight_fn=None):
    """Integrate ``f(t, s) * weight_fn(s)`` over ``[a, b]`` (arrays).

    ``f`` is assumed to behave like ``(b-s)**-right_exp (s-a)**-left_exp``
    near the endpoints; those factors are absorbed into the rule.
    """
    x, w = _jacobi_rule(n, -right_exp, -left_exp)
    half = 0.5 * (b - a)
    s = a[:, None] + half[:, None] * (x[None, :] + 1.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        vals = f(t[:, None], s)
        if right_exp:
            vals = vals * (b[:, None] - s) ** right_exp
        if left_exp:
            vals = vals * (s - a[:, None]) ** left_exp
        if weight_fn is not None:
            vals = vals * weight_fn(s, a[:, None], b[:, None])
    return (vals @ w) * half ** (1.0 - right_exp - left_exp)


def _generic_integrals(k: Kernel, t, a, b, weight_fn=None):
    out = np.empty(t.shape)
    tol = 1e-13 * np.maximum(t, 1.0)
    touch_diag = (k.alpha > 0) & (b >= t - tol)
    touch_orig = (k.beta > 0) & (a <= 0)
    for d in (False, True):
        for o in (False, True):
            sel = (touch_diag == d) & (touch_orig == o)
            if not np.any(sel):
                continue
            n = _GJ_POINTS if (d or o) else _GL_POINTS
            out[sel] = _gauss_jacobi(
                k.func, t[sel], a[sel], b[sel],
                k.alpha if d else 0.0, k.beta if o else 0.0, n, weight_fn)
    return out


def _prepare(t, a, b):
    t, a, b = np.broadcast_arrays(np.asarray(t, float), np.asarray(a, float),
                                  np.asarray(b, float))
    shape = t.shape
    return t.ravel().copy(), a.ravel().copy(), b.ravel().copy(), shape


def cell_integrals(k: Kernel, t, a, b) -> np.ndarray:
    """Vectorised ``int_a^b kappa(t, s) ds`` (closed form when available)."""
    t, a, b, shape = _prepare(t, a, b)
    if t.size == 0:
        return np.zeros(shape)
    if k.integral is not None:
        out = np.asarray(k.integral(t, a, b), dtype=float)
    else:
        out = _generic_integrals(k, t, a, b)
    return out.reshape(shape)


def _moment_weight(s, a, b):
    return (s - a) / (b - a)


def cell_moments(k: Kernel, t, a, b) -> np.ndarray:
    """Vectorised ``int_a^b kappa(t, s) (s - a)/(b - a) ds``."""
    t, a, b, shape = _prepare(t, a, b)
    if t.size == 0:
        return np.zeros(shape)
    if k.moment is not None:
        out = np.asarray(k.moment(t, a, b), dtype=float)
    else:
        out = _generic_integrals(k, t, a, b, weight_fn=_moment_weight)
    return out.reshape(shape)


def cell_integrals_first(k: Kernel, s, a, b) -> np.ndarray:
    """Vectorised ``int_a^b kappa(u, s) du`` (integration in the first argument).

    Requires ``a >= s``; a cell starting at ``u = s`` has its diagonal
    singularity absorbed into a Gauss-Jacobi rule.
    """
    s, a, b, shape = _prepare(s, a, b)
    out = np.empty(s.shape)
    swapped = lambda ss, u: k.func(u, ss)  # noqa: E731
    touch = (k.alpha > 0) & (a <= s + 1e-13 * np.maximum(s, 1.0))
    for d in (False, True):
        sel = touch == d
        if not np.any(sel):
            continue
        x, w = _jacobi_rule(_GJ_POINTS if d else _GL_POINTS, 0.0, -k.alpha if d else 0.0)
        half = 0.5 * (b[sel] - a[sel])
        u = a[sel][:, None] + half[:, None] * (x[None, :] + 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = swapped(s[sel][:, None], u)
            if d:
                vals = vals * (u - a[sel][:, None]) ** k.alpha
        out[sel] = (vals @ w) * half ** (1.0 - (k.alpha if d else 0.0))
    return out.reshape(shape)


def cell_integral(k: Kernel, t: float, a: float, b: float, method: str = "auto") -> float:
    """``int_a^b kappa(t, s) ds`` for a single cell ``[a, b]`` inside ``[0, t]``.

    ``method="auto"`` uses the closed form when the kernel has one,
    ``"adaptive"`` forces QUADPACK with the declared endpoint
    singularities split off as algebraic weights.
    """
    t, a, b = float(t), float(a), float(b)
    if not (0 <= a < b <= t * (1 + 1e-15)):
        raise DomainError(f"cell [{a}, {b}] is not a non-degenerate subset of [0, {t}]")
    b = min(b, t)
    at_diag = b >= t
    if at_diag and k.alpha >= 1:
        raise DomainError(f"{k!r} is not integrable up to s = t (alpha = {k.alpha})")
    if method == "auto" and k.integral is not None:
        return float(cell_integrals(k, t, a, b))
    if method not in ("auto", "adaptive"):
        raise ConfigurationError(f"unknown integration method {method!r}")
    ra = k.alpha if (at_diag and k.alpha > 0) else 0.0
    la = k.beta if (a == 0 and k.beta > 0) else 0.0

    nudge = 1e-14 * (b - a)

    def f(s):
        # the weighted rule may sample the endpoints themselves
        s = min(max(s, a + nudge if la else a), b - nudge if ra else b)
        v = float(k.value(t, s))
        if ra:
            v *= (t - s) ** ra
        if la:
            v *= s ** la
        return v

    if ra or la:
        val, _ = integrate.quad(f, a, b, weight="alg", wvar=(-la, -ra),
                                limit=200, epsabs=0.0, epsrel=1e-12)
    else:
        val, _ = integrate.quad(f, a, b, limit=200, epsabs=0.0, epsrel=1e-12)
    return float(val)


# ---------------------------------------------------------------------------
# grid weights

def _lower_pairs(N: int):
    i, l = np.tril_indices(N + 1, k=-1)
    return i, l


def _toeplitz_lower(v: np.ndarray, N: int) -> np.ndarray:
    """Matrix W[i, l] = v[i - l] for l < i (v indexed from 1)."""
    W = np.zeros((N + 1, N))
    i, l = _lower_pairs(N)
    W[i, l] = v[i - l]
    return W


def weight_matrix(k: Kernel, grid: Grid) -> np.ndarray:
    """Product-integration weights ``W[i, l] = int_{cell l} kappa(t_i, s) ds``.

    Shape ``(N + 1, N)``; entries with ``l >= i`` are zero.  Memoised per grid.
    """
    key = ("W", grid.kind, grid.p, grid.T, grid.N)
    cached = k._cache.get(key)
    if cached is not None:
        return cached
    N, t = grid.N, grid.nodes
    if k.is_convolution and grid.is_uniform:
        m = np.arange(1, N + 1)
        v = np.zeros(N + 1)
        v[1:] = cell_integrals(k, t[m], np.zeros(N), np.full(N, t[1]))
        W = _toeplitz_lower(v, N)
    else:
        i, l = _lower_pairs(N)
        W = np.zeros((N + 1, N))
        W[i, l] = _chunked(cell_integrals, k, t[i], t[l], t[l + 1])
    if not np.all(np.isfinite(W)):
        raise DomainError(f"non-finite cell integrals for {k!r} on {grid.describe()}")
    W.setflags(write=False)
    k._cache[key] = W
    return W


def trapezoid_weights(k: Kernel, grid: Grid):
    """Product-trapezoid weights ``(A, B)``.

    ``int_0^{t_i} kappa(t_i, s) x(s) ds ~ sum_l A[i,l] x_l + B[i,l] x_{l+1}``
    for ``x`` linear on each cell.
    """
    key = ("AB", grid.kind, grid.p, grid.T, grid.N)
    cached = k._cache.get(key)
    if cached is not None:
        return cached
    N, t = grid.N, grid.nodes
    W = weight_matrix(k, grid)
    i, l = _lower_pairs(N)
    M1 = np.zeros((N + 1, N))
    M1[i, l] = _chunked(cell_moments, k, t[i], t[l], t[l + 1])
    A = W - M1
    A.setflags(write=False)
    M1.setflags(write=False)
    k._cache[key] = (A, M1)
    return A, M1


def _chunked(fn, k, t, a, b, chunk=65536):
    out = np.empty(t.shape)
    for start in range(0, t.size, chunk):
        sl = slice(start, start + chunk)
        out[sl] = fn(k, t[sl], a[sl], b[sl])
    return out


# ---------------------------------------------------------------------------
# closed forms

def _betainc_diff(p, q, xa, xb):
    """``I_xb(p, q) - I_xa(p, q)`` with the complement used near 1."""
    xa = np.clip(xa, 0.0, 1.0)
    xb = np.clip(xb, 0.0, 1.0)
    lo = special.betainc(p, q, xb) - special.betainc(p, q, xa)
    hi = special.betainc(q, p, 1.0 - xa) - special.betainc(q, p, 1.0 - xb)
    return np.where(xa > 0.5, hi, lo)


def _gamma_int(p, delta, u1, u2):
    """``int_{u1}^{u2} u**(p-1) exp(-delta u) du`` for ``p > 0``."""
    if delta == 0:
        return (u2 ** p - u1 ** p) / p
    g = special.gamma(p) * delta ** (-p)
    lo = special.gammainc(p, delta * u2) - special.gammainc(p, delta * u1)
    hi = special.gammaincc(p, delta * u1) - special.gammaincc(p, delta * u2)
    return g * np.where(delta * u1 > p, hi, lo)


def zero() -> Kernel:
    return constant(0.0)


def constant(c: float) -> Kernel:
    """``kappa(t, s) = c``."""
    if c < 0:
        raise ConfigurationError("kernel constant must be nonnegative")
    c = float(c)
    return Kernel(
        func=lambda t, s: np.full(np.broadcast(t, s).shape, c),
        label="constant", params=(c,),
        integral=lambda t, a, b: c * (b - a),
        moment=lambda t, a, b: 0.5 * c * (b - a),
        modulus=lambda t2, t, s: np.zeros(np.broadcast(t2, t, s).shape),
        profile=lambda u: np.full(np.shape(u), c),
    )


def separable_h(h: Callable, antiderivative: Optional[Callable] = None,
                beta: float = 0.0, label: str = "separable", params: tuple = ()) -> Kernel:
    """``kappa(t, s) = h(s)``; ``beta`` declares an ``s**-beta`` singularity of ``h``."""
    integral = None
    if antiderivative is not None:
        integral = lambda t, a, b: antiderivative(b) - antiderivative(a)  # noqa: E731
    return Kernel(
        func=lambda t, s: np.broadcast_to(h(s), np.broadcast(t, s).shape).astype(float),
        label=label, params=params, beta=beta,
        singularity="algebraic" if beta else "none",
        integral=integral, closed_form=antiderivative is not None,
        modulus=lambda t2, t, s: np.zeros(np.broadcast(t2, t, s).shape),
    )


def separable_const(c: float) -> Kernel:
    """Separable kernel with constant profile ``h(s) = c``."""
    c = float(c)
    return separable_h(lambda s: np.full(np.shape(s), c), lambda s: c * np.asarray(s),
                       label="separable_const", params=(c,))


def convolution(h: Callable, antiderivative: Optional[Callable] = None,
                alpha: float = 0.0, label: str = "convolution", params: tuple = ()) -> Kernel:
    """``kappa(t, s) = h(t - s)``; ``alpha`` declares a ``u**-alpha`` singularity of ``h`` at 0."""
    integral = None
    if antiderivative is not None:
        integral = lambda t, a, b: antiderivative(t - a) - antiderivative(t - b)  # noqa: E731
    return Kernel(
        func=lambda t, s: np.asarray(h(t - s), dtype=float),
        label=label, params=params, alpha=alpha,
        singularity="algebraic" if alpha else "none",
        integral=integral, closed_form=antiderivative is not None,
        modulus=lambda t2, t, s: np.abs(h(t2 - s) - h(t - s)),
        profile=h,
    )


def exp_convolution(c: float, rate: float = 1.0) -> Kernel:
    """Convolution kernel with profile ``h(u) = c exp(-rate u)``."""
    c, rate = float(c), float(rate)
    if c < 0 or rate <= 0:
        raise ConfigurationError("exp_convolution needs c >= 0 and rate > 0")
    return convolution(lambda u: c * np.exp(-rate * u),
                       lambda u: c * (-np.expm1(-rate * np.asarray(u))) / rate,
                       label="expconv", params=(c, rate))


def power(C0: float, alpha: float, beta: float) -> Kernel:
    """``C0 (t - s)**-alpha s**-beta`` with ``alpha, beta in [0, 1)``."""
    if C0 <= 0 or not (0 <= alpha < 1) or not (0 <= beta < 1):
        raise ConfigurationError("power kernel needs C0 > 0 and alpha, beta in [0, 1)")
    C0, alpha, beta = float(C0), float(alpha), float(beta)
    p0, q0 = 1.0 - beta, 1.0 - alpha
    B0 = special.beta(p0, q0)
    B1 = special.beta(p0 + 1.0, q0)

    def func(t, s):
        return C0 * (t - s) ** (-alpha) * s ** (-beta)

    def integral(t, a, b):
        return C0 * t ** (q0 - beta) * B0 * _betainc_diff(p0, q0, a / t, b / t)

    def moment(t, a, b):
        first = C0 * t ** (q0 - beta + 1.0) * B1 * _betainc_diff(p0 + 1.0, q0, a / t, b / t)
        return (first - a * integral(t, a, b)) / (b - a)

    def modulus(t2, t, s):
        return C0 * s ** (-beta) * np.abs((t - s) ** (-alpha) - (t2 - s) ** (-alpha))

    return Kernel(func=func, label="power", params=(C0, alpha, beta), alpha=alpha, beta=beta,
                  singularity="algebraic" if (alpha or beta) else "none",
                  integral=integral, moment=moment, modulus=modulus,
                  profile=(lambda u: C0 * np.asarray(u, float) ** (-alpha)) if beta == 0 else None)


def _asin_diff(t, a, b):
    """``arcsin(b/t) - arcsin(a/t)`` without cancellation near ``b = t``."""
    ca = np.sqrt((t - a) * (t + a)) / t
    cb = np.sqrt(np.clip((t - b) * (t + b), 0.0, None)) / t
    return np.arctan2((b * ca - a * cb) / t, ca * cb + a * b / t ** 2)


def circle(C0: float) -> Kernel:
    """``C0 / sqrt(t**2 - s**2)``."""
    if C0 <= 0:
        raise ConfigurationError("circle kernel needs C0 > 0")
    C0 = float(C0)

    def integral(t, a, b):
        return C0 * _asin_diff(t, a, b)

    def moment(t, a, b):
        ra = np.sqrt((t - a) * (t + a))
        rb = np.sqrt(np.clip((t - b) * (t + b), 0.0, None))
        return C0 * ((ra - rb) - a * _asin_diff(t, a, b)) / (b - a)

    return Kernel(func=lambda t, s: C0 / np.sqrt((t - s) * (t + s)), label="circle",
                  params=(C0,), alpha=0.5, singularity="algebraic",
                  integral=integral, moment=moment)


def semigroup(C: float, alpha: float, delta: float) -> Kernel:
    """``C (t - s)**-alpha exp(-delta (t - s))``."""
    if C < 0 or not (0 <= alpha < 1) or delta < 0:
        raise ConfigurationError("semigroup kernel needs C >= 0, alpha in [0, 1), delta >= 0")
    C, alpha, delta = float(C), float(alpha), float(delta)
    p = 1.0 - alpha

    def h(u):
        return C * u ** (-alpha) * np.exp(-delta * u)

    def integral(t, a, b):
        return C * _gamma_int(p, delta, t - b, t - a)

    def moment(t, a, b):
        u1, u2 = t - b, t - a
        m = (t - a) * _gamma_int(p, delta, u1, u2) - _gamma_int(p + 1.0, delta, u1, u2)
        return C * m / (b - a)

    k = convolution(h, alpha=alpha, label="semigroup", params=(C, alpha, delta))
    return Kernel(func=k.func, label=k.label, params=k.params, alpha=alpha,
                  singularity=k.singularity, integral=integral, moment=moment,
                  modulus=k.modulus, profile=h)


_LOGLOG_CUT = math.exp(-1.0)


def _loglog_profile(delta):
    def h(u):
        u = np.asarray(u, dtype=float)
        v = np.minimum(u, _LOGLOG_CUT)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.exp(-delta * u) / (v * np.log(v) ** 2)
        return np.where(u > 0, out, np.inf)
    return h


def _loglog_primitive(delta, u1, u2):
    """``int_{u1}^{u2} h`` for the loglog profile (scalar, semi-analytic)."""
    total = 0.0
    lo, hi = u1, min(u2, _LOGLOG_CUT)
    if hi > lo:
        # s = exp(-v): ds / (s log^2 s) = dv / v**2 on v in (1, inf)
        va = math.inf if lo <= 0 else -math.log(lo)
        vb = -math.log(hi)
        f = lambda v: math.exp(-delta * math.exp(-v)) / (v * v)  # noqa: E731
        val, _ = integrate.quad(f, vb, va, limit=200, epsabs=0.0, epsrel=1e-12)
        total += val
    lo = max(u1, _LOGLOG_CUT)
    if u2 > lo:
        e = math.e
        if delta == 0:
            total += e * (u2 - lo)
        else:
            total += e * (math.exp(-delta * lo) - math.exp(-delta * u2)) / delta
    return total


def loglog(delta: float) -> Kernel:
    """Convolution kernel with profile ``exp(-delta u) / (u log^2 u)``.

    The profile as written is non-integrable at ``u = 1``; it is used on
    ``(0, 1/e]`` and continued by ``e * exp(-delta u)`` beyond, which keeps
    it continuous, integrable and with the same singularity at 0.
    """
    if delta < 0:
        raise ConfigurationError("loglog kernel needs delta >= 0")
    delta = float(delta)
    h = _loglog_profile(delta)

    def integral(t, a, b):
        return np.array([_loglog_primitive(delta, ti - bi, ti - ai)
                         for ti, ai, bi in zip(np.ravel(t), np.ravel(a), np.ravel(b))])

    return Kernel(func=lambda t, s: h(t - s), label="loglog", params=(delta,),
                  singularity="custom", integral=integral, closed_form=False,
                  profile=h)


# ---------------------------------------------------------------------------
# fractional Brownian motion kernel

def fbm_constant(H: float) -> float:
    """Normalising constant of the fBm Volterra kernel."""
    return math.sqrt(2 * H * math.gamma(1.5 - H) / (math.gamma(H + 0.5) * math.gamma(2 - 2 * H)))


class _FbmTail:
    """``F(u) = c_H (1/2 - H) int_1^u (r-1)**(H-3/2) (1 - r**(H-1/2)) dr`` on a log table.

    Tabulated in ``x = log(u - 1)``; the interpolated quantity is
    ``log(F(u) / (u-1)**(H+1/2))``, which is smooth and has linear tails.
    """

    XMIN, XMAX, NODES = -30.0, 45.0, 1501

    def __init__(self, H: float):
        self.H = H
        c = fbm_constant(H)
        x = np.linspace(self.XMIN, self.XMAX, self.NODES)
        g, gw = np.polynomial.legendre.leggauss(10)
        # integrand in y = log(r - 1):  e^{(H-1/2) y} (1 - (1 + e^y)^{H-1/2})
        lo, hi = x[:-1], x[1:]
        y = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * g[None, :]
        vals = np.exp((H - 0.5) * y) * (-np.expm1((H - 0.5) * np.log1p(np.exp(y))))
        pieces = 0.5 * (hi - lo) * (vals @ gw)
        head = (0.5 - H) * math.exp((H + 0.5) * self.XMIN) / (H + 0.5)
        cum = head + np.concatenate([[0.0], np.cumsum(pieces)])
        F = c * (0.5 - H) * cum
        logphi = np.log(F) - (H + 0.5) * x
        self._interp = PchipInterpolator(x, logphi, extrapolate=False)
        self._x = x
        self._lo = logphi[0]
        self._hi = logphi[-1]
        self._slope_hi = (logphi[-1] - logphi[-2]) / (x[-1] - x[-2])

    def log_phi(self, x):
        x = np.asarray(x, dtype=float)
        out = self._interp(np.clip(x, self.XMIN, self.XMAX))
        out = np.where(x < self.XMIN, self._lo, out)
        out = np.where(x > self.XMAX, self._hi + self._slope_hi * (x - self.XMAX), out)
        return out

    def second_term(self, t, s):
        """``s**(H-1/2) F(t/s)`` for ``0 < s < t``."""
        H = self.H
        with np.errstate(divide="ignore"):
            x = np.log(t - s) - np.log(s)
        return np.exp((H - 0.5) * np.log(s) + self.log_phi(x) + (H + 0.5) * x)


@lru_cache(maxsize=32)
def _fbm_tail(H: float) -> _FbmTail:
    return _FbmTail(H)


def fbm_kernel(H: float) -> Kernel:
    """The fBm kernel ``K_H(t, s) = c_H (t-s)**(H-1/2) + s**(H-1/2) F(t/s)`` for ``s < t``."""
    if not (0 < H < 1):
        raise ConfigurationError(f"Hurst index must lie in (0, 1), got {H!r}")
    H = float(H)
    c = fbm_constant(H)
    if H == 0.5:
        k = constant(1.0)
        return Kernel(func=k.func, label="fbm", params=(H,), integral=k.integral,
                      moment=k.moment, modulus=k.modulus)
    tail = _fbm_tail(H)
    expo = H - 0.5
    ob = abs(expo)

    def func(t, s):
        t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
        with np.errstate(divide="ignore", invalid="ignore"):
            first = c * (t - s) ** expo
            out = first + tail.second_term(t, s)
        return np.where(s > 0, out, np.inf)

    def second(t, s):
        return tail.second_term(t, s)

    second_k = Kernel(func=second, label="fbm-tail", beta=ob)

    def second_integral(t, a, b, moment=False):
        # origin cells: the tail term has a non-smooth expansion in s**|H-1/2|,
        # so those cells are split geometrically towards s = 0
        out = np.empty(t.shape)
        orig = a <= 0
        inner = ~orig
        if np.any(inner):
            wf = _moment_weight if moment else None
            out[inner] = _generic_integrals(second_k, t[inner], a[inner], b[inner], wf)
            if moment:
                out[inner] *= b[inner] - a[inner]
        if np.any(orig):
            to, bo = t[orig], b[orig]
            wf = (lambda s, lo, hi: s) if moment else None
            acc = np.zeros(to.shape)
            hi = bo.copy()
            for _ in range(_ORIGIN_LEVELS):
                lo = hi * 0.25
                acc += _generic_integrals(second_k, to, lo, hi, wf)
                hi = lo
            acc += _generic_integrals(second_k, to, np.zeros_like(hi), hi, wf)
            out[orig] = acc
        return out

    def integral(t, a, b):
        q = H + 0.5
        first = c * ((t - a) ** q - np.clip(t - b, 0.0, None) ** q) / q
        return first + second_integral(t, a, b)

    def moment(t, a, b):
        # first term: int_a^b (t-s)^{q-1} (s-a) ds with u = t - s
        q = H + 0.5
        u1, u2 = np.clip(t - b, 0.0, None), t - a
        m1 = c * ((t - a) * (u2 ** q - u1 ** q) / q - (u2 ** (q + 1) - u1 ** (q + 1)) / (q + 1))
        m2 = second_integral(t, a, b, moment=True)
        return (m1 + m2) / (b - a)

    return Kernel(func=func, label="fbm", params=(H,), alpha=max(0.0, -expo), beta=ob,
                  singularity="algebraic", integral=integral, moment=moment,
                  closed_form=False)


# ---------------------------------------------------------------------------
# classification

@dataclass
class KernelClassReport:
    """Outcome of :func:`classify`.

    ``verdict`` is one of ``"in-K>1"``, ``"in-K0"``, ``"in-K-not-K0"``,
    ``"not-in-K"`` or ``"inconclusive"``.
    """

    verdict: str
    evidence: dict

    def row(self) -> dict:
        ev = self.evidence
        return {"verdict": self.verdict,
                "gripenberg_limit": ev["gripenberg_limit"],
                "sup_integral": ev["sup_integral"],
                "power_finite": ";".join(f"{b}:{v}" for b, v in ev["power_status"].items())}


_ETAS = (1e-6, 1e-9, 1e-12)


def _truncated_power_integral(k: Kernel, t: float, q: float, eta: float) -> float:
    """``int`` of ``kappa(t, .)**q`` over ``[eta t, (1 - eta) t]`` in log coordinates."""
    def left(y):
        s = t * math.exp(y)
        return float(k.value(t, s)) ** q * s

    def right(y):
        d = t * math.exp(y)
        return float(k.value(t, t - d)) ** q * d

    lo, hi = math.log(eta), math.log(0.5)
    opts = dict(limit=200, epsabs=0.0, epsrel=1e-10)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        # divergent integrands are expected here; the caller reads the growth
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        v1, _ = integrate.quad(left, lo, hi, **opts)
        v2, _ = integrate.quad(right, lo, hi, **opts)
    return v1 + v2


def _endpoint_status(k: Kernel, t: float, q: float):
    """Classify ``int_0^t kappa(t,.)**q`` as finite / infinite / borderline."""
    J = [_truncated_power_integral(k, t, q, e) for e in _ETAS]
    if not all(np.isfinite(J)):
        return "infinite", math.inf
    d1, d2 = J[1] - J[0], J[2] - J[1]
    if d2 <= 1e-12 * max(abs(J[2]), 1e-300) or d1 <= 0:
        return "finite", J[2]
    order = 1.0 + math.log10(d2 / d1) / 3.0
    if order < 0.95:
        # geometric tail beyond the last cut-off
        r = d2 / d1
        return "finite", J[2] + d2 * r / (1 - r) if r < 1 else J[2]
    if order > 1.05:
        return "infinite", math.inf
    return "borderline", J[2]


def _power_status(k: Kernel, T: float, q: float):
    ts = T * np.array([1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1, 0.25, 0.5, 0.75, 1.0])
    vals = []
    status = "finite"
    for t in ts:
        st, v = _endpoint_status(k, float(t), q)
        if st == "infinite":
            return "infinite", math.inf, None
        if st == "borderline":
            status = "borderline"
        vals.append(v)
    vals = np.array(vals)
    slope = math.log(vals[1] / vals[0]) / math.log(ts[1] / ts[0]) if vals[0] > 0 else 1.0
    if slope < -0.05:
        return "infinite", math.inf, slope
    if slope < 0 and status == "finite":
        status = "borderline"
    return status, float(vals.max()), slope


def _gripenberg(k: Kernel, T: float, eps: float) -> float:
    ts = np.unique(np.concatenate([[0.0], T * np.logspace(-8, 0, 17), np.linspace(0, T, 21)]))
    ts = ts[ts <= T - eps]
    best = 0.0
    for t in ts:
        best = max(best, cell_integral(k, t + eps, t, t + eps))
    return best


def _extrapolate(values: Sequence[float]) -> float:
    if len(values) < 3:
        return float(values[-1])
    g1, g2, g3 = values[-3:]
    d1, d2 = g2 - g1, g3 - g2
    if abs(d2) <= 1e-12 * max(abs(g3), 1.0):
        return float(g3)
    if d1 != 0:
        r = d2 / d1
        if 0 < r < 1:
            return float(max(g3 + d2 * r / (1 - r), 0.0))
    return float(g3)


def classify(k: Kernel, T: float = 1.0, beta_candidates: Sequence[float] = (1.1, 1.5, 2.0),
             eps_sequence: Optional[Sequence[float]] = None) -> KernelClassReport:
    """Numerically place ``k`` in the nested classes K>1 < K0 < K.

    Integrability of ``kappa**q`` is judged from the growth of truncated
    integrals as the endpoint cut-offs shrink; the shifted-window
    quantity ``sup_t int_t^{t+eps} kappa(t+eps, s) ds`` is extrapolated
    to ``eps -> 0``.  Values within 5% of a threshold are inconclusive.
    """
    if eps_sequence is None:
        eps_sequence = [T * 10.0 ** (-j) for j in range(1, 7)]
    eps_sequence = list(eps_sequence)
    if any(e <= 0 for e in eps_sequence) or any(np.diff(eps_sequence) >= 0):
        raise ConfigurationError("eps_sequence must be positive and strictly decreasing")

    base_status, sup_int, base_slope = _power_status(k, T, 1.0)
    power = {}
    for q in beta_candidates:
        if q <= 1:
            raise ConfigurationError("beta candidates must exceed 1")
        st, v, sl = _power_status(k, T, q)
        power[float(q)] = st
    grip = [_gripenberg(k, T, e) for e in eps_sequence]
    g_lim = _extrapolate(grip)
    evidence = {"sup_integral": sup_int, "sup_integral_status": base_status,
                "small_t_slope": base_slope, "power_status": power,
                "gripenberg": dict(zip(eps_sequence, grip)), "gripenberg_limit": g_lim}

    if base_status == "infinite":
        verdict = "not-in-K"
    elif base_status == "borderline":
        verdict = "inconclusive"
    elif any(st == "finite" for st in power.values()):
        verdict = "in-K>1"
    elif g_lim < 0.01:
        verdict = "in-K0"
    elif g_lim < 0.95:
        verdict = "in-K-not-K0"
    elif g_lim <= 1.05:
        verdict = "inconclusive"
    else:
        verdict = "not-in-K"
    return KernelClassReport(verdict=verdict, evidence=evidence)


# ---------------------------------------------------------------------------
# Paley-Wiener

@dataclass
class PaleyWienerResult:
    integral: float
    resolvent_integrable: bool
    tail: float


def paley_wiener_check(h, T_tail: float, decay=("exponential", 1.0)) -> PaleyWienerResult:
    """Estimate ``int_0^inf h`` and decide integrability of the convolution resolvent.

    ``h`` is a convolution :class:`Kernel` or a plain profile callable.
    ``decay`` declares the tail: ``("exponential", rate)``,
    ``("power", p)`` with ``p > 1`` or ``("compact",)``.
    """
    kind = decay[0] if decay else None
    if isinstance(h, Kernel):
        if not h.is_convolution:
            raise ConfigurationError("paley_wiener_check needs a convolution kernel")
        body = float(cell_integrals(h, T_tail, 0.0, T_tail)) if h.integral is not None \
            else cell_integral(h, T_tail, 0.0, T_tail)
        prof = h.profile
    else:
        prof = h
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            body, _ = integrate.quad(lambda u: float(prof(u)), 0.0, T_tail, limit=400)
    end = float(prof(np.array(T_tail)))
    if kind == "exponential":
        rate = float(decay[1])
        if rate <= 0:
            raise DomainError("exponential decay rate must be positive")
        tail = end / rate
    elif kind == "power":
        p = float(decay[1])
        if p <= 1:
            raise DomainError(f"power decay u**-{p} is not integrable; tail cannot be extrapolated")
        tail = end * T_tail / (p - 1)
    elif kind == "compact":
        tail = 0.0
    else:
        raise DomainError(f"unsupported tail decay declaration {decay!r}")
    total = body + tail
    return PaleyWienerResult(integral=total, resolvent_integrable=bool(total < 1.0), tail=tail)


# ---------------------------------------------------------------------------
# registry for configuration files

KERNEL_REGISTRY = {
    "constant": (constant, ("c",)),
    "separable_const": (separable_const, ("c",)),
    "expconv": (exp_convolution, ("c", "rate")),
    "power": (power, ("C0", "alpha", "beta")),
    "circle": (circle, ("C0",)),
    "semigroup": (semigroup, ("C", "alpha", "delta")),
    "loglog": (loglog, ("delta",)),
    "fbm": (fbm_kernel, ("H",)),
}


def kernel_from_label(label: str, params: Sequence[float]) -> Kernel:
    """Instantiate a registered kernel, e.g. ``kernel_from_label("power", [1, .3, .2])``."""
    try:
        ctor, names = KERNEL_REGISTRY[label]
    except KeyError:
        raise ConfigurationError(f"unknown kernel label {label!r}; "
                                 f"known: {', '.join(sorted(KERNEL_REGISTRY))}") from None
    if len(params) != len(names):
        raise ConfigurationError(f"kernel {label!r} takes parameters {names}, got {list(params)}")
    return ctor(*[float(p) for p in params])

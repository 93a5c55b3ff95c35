"""Registered coefficient families used by tests, the acceptance suite and the CLI.

Every factory takes keyword parameters with defaults and returns a
:class:`~svolterra.volterra_sde.Coefficients`.  Scalar families have
``d = m = 1``.
"""
from __future__ import annotations

import math
from typing import Callable, Dict

import numpy as np

from . import kernels as kmod
from .errors import ConfigurationError
from .volterra_sde import Coefficients

__all__ = ["SCENARIOS", "make_scenario", "perturbed_noise_family",
           "additive_linear", "ou_mild", "lipschitz", "linear_growth", "superlinear", "schilder"]


def _const_b(sigma):
    return lambda s, x: np.full(x.shape + (1,), float(sigma))


def additive_linear(kappa_C: float = 0.5, kappa_alpha: float = 0.3, sigma: float = 0.5,
                    noise_alpha: float = 0.2) -> Coefficients:
    """``A = kappa(t, s) x`` with a power kernel, additive noise ``sigma (t-s)**-noise_alpha``;
    ``g(t) = 1 + t``."""
    kap = kmod.power(kappa_C, kappa_alpha, 0.0)
    sig = kmod.power(1.0, noise_alpha, 0.0) if noise_alpha else kmod.constant(1.0)
    return Coefficients(
        d=1, m=1, g=lambda t: 1.0 + np.asarray(t),
        drift_kernel=kap, drift_fn=lambda s, x: x,
        diffusion_kernel=sig, diffusion_fn=_const_b(sigma),
        kappa1=kap, kappa2=sig, label="additive-linear",
        params=(kappa_C, kappa_alpha, sigma, noise_alpha))


def ou_mild(x0: float = 1.0, lam: float = 1.0, sigma: float = 0.5) -> Coefficients:
    """Mild Ornstein-Uhlenbeck form: ``g = x0 exp(-lam t)``, ``A = 0``,
    ``B = sigma exp(-lam (t - s))``."""
    k = kmod.exp_convolution(1.0, lam)
    return Coefficients(
        d=1, m=1, g=lambda t: x0 * np.exp(-lam * np.asarray(t)),
        diffusion_kernel=k, diffusion_fn=_const_b(sigma),
        kappa2=k, label="ou-mild", params=(x0, lam, sigma))


def ou_second_moment(t, x0=1.0, lam=1.0, sigma=0.5):
    """``E X(t)**2`` for :func:`ou_mild` (Ito isometry)."""
    t = np.asarray(t, dtype=float)
    return x0 ** 2 * np.exp(-2 * lam * t) + sigma ** 2 * (-np.expm1(-2 * lam * t)) / (2 * lam)


def lipschitz(drift_alpha: float = 0.3, noise_alpha: float = 0.2, b0: float = 0.5,
              b1: float = 0.25, shift: float = 0.0) -> Coefficients:
    """Bounded smooth coefficients: ``A = (t-s)**-drift_alpha sin(x)``,
    ``B = (t-s)**-noise_alpha (b0 + shift + b1 cos(x))``, ``g = 1``."""
    ka = kmod.power(1.0, drift_alpha, 0.0)
    kb = kmod.power(1.0, noise_alpha, 0.0)
    c0 = b0 + shift

    def drift(t, s, x):
        return ((t - s) ** (-drift_alpha))[..., None] * np.sin(x)

    return Coefficients(
        d=1, m=1, g=1.0,
        drift_kernel=ka, drift_fn=lambda s, x: np.sin(x),
        diffusion_kernel=kb, diffusion_fn=lambda s, x: (c0 + b1 * np.cos(x))[..., None],
        drift=drift, kappa1=ka, kappa2=kb, label="lipschitz",
        params=(drift_alpha, noise_alpha, b0, b1, shift))


def perturbed_noise_family(ms, sigma0: float = 0.2, **kw):
    """``B_m = B + sigma0 / m`` on the Lipschitz scenario."""
    return [lipschitz(shift=sigma0 / m, **kw) for m in ms]


def linear_growth(rate: float = 0.5, drift_alpha: float = 0.3, vol: float = 0.6,
                  noise_alpha: float = 0.1) -> Coefficients:
    """Linear growth: ``A = rate (t-s)**-drift_alpha x``, ``B = vol (t-s)**-noise_alpha x``."""
    ka = kmod.power(rate, drift_alpha, 0.0)
    kb = kmod.power(vol, noise_alpha, 0.0)
    return Coefficients(
        d=1, m=1, g=1.0,
        drift_kernel=ka, drift_fn=lambda s, x: x,
        diffusion_kernel=kb, diffusion_fn=lambda s, x: x[..., None],
        kappa1=ka, kappa2=kb, label="linear-growth",
        params=(rate, drift_alpha, vol, noise_alpha))


def superlinear(rate: float = 1.0, drift_alpha: float = 0.3, vol: float = 0.6,
                noise_alpha: float = 0.1) -> Coefficients:
    """Cubic drift ``A = rate (t-s)**-drift_alpha x**3``; outside the linear-growth class."""
    ka = kmod.power(rate, drift_alpha, 0.0)
    kb = kmod.power(vol, noise_alpha, 0.0)
    return Coefficients(
        d=1, m=1, g=1.0,
        drift_kernel=ka, drift_fn=lambda s, x: x ** 3,
        diffusion_kernel=kb, diffusion_fn=lambda s, x: x[..., None],
        kappa1=ka, kappa2=kb, label="superlinear", params=(rate, drift_alpha, vol, noise_alpha))


def schilder(x0: float = 0.0, sigma: float = 1.0) -> Coefficients:
    """``X = x0 + sigma W``: ``g = x0``, ``A = 0``, ``B = sigma``."""
    one = kmod.constant(1.0)
    return Coefficients(d=1, m=1, g=float(x0), diffusion_kernel=one, diffusion_fn=_const_b(sigma),
                        kappa2=one, label="schilder", params=(x0, sigma))


def linear_drift(x0: float = 0.0, rate: float = -0.5, sigma: float = 1.0) -> Coefficients:
    """``A = rate x`` (constant kernel), ``B = sigma``, ``g = x0``."""
    one = kmod.constant(1.0)
    kap = kmod.constant(abs(rate)) if rate else None
    sign = 1.0 if rate >= 0 else -1.0
    kw = dict(drift_kernel=kap, drift_fn=lambda s, x: sign * x) if rate else {}
    return Coefficients(d=1, m=1, g=float(x0), diffusion_kernel=one, diffusion_fn=_const_b(sigma),
                        kappa1=kap, kappa2=one, label="linear-drift", params=(x0, rate, sigma),
                        **kw)


SCENARIOS: Dict[str, Callable[..., Coefficients]] = {
    "additive-linear": additive_linear,
    "ou-mild": ou_mild,
    "lipschitz": lipschitz,
    "linear-growth": linear_growth,
    "superlinear": superlinear,
    "schilder": schilder,
    "linear-drift": linear_drift,
}


def make_scenario(name: str, **params) -> Coefficients:
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise ConfigurationError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for scenario {name!r}: {exc}") from None

"""Built-in coefficient packs, all with ``n = m = d = 1``.

``linear`` covers the closed-form oracles used throughout the tests
(martingale, pure forward, constant terminal, constant generator).
``affine_random`` has coefficients driven by the Brownian path and
``trig_bounded`` has bounded nonlinear coefficients.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .fbsde import FbsdeSpec, Lipschitz


def _col(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[0], 1, 1)


def linear(x0: float = 0.0, bx: float = 0.0, by: float = 0.0, bz: float = 0.0, b0: float = 0.0,
           s0: float = 1.0, sx: float = 0.0, sy: float = 0.0, a: float = 0.0,
           fx: float = 0.0, fy: float = 0.0, fz: float = 0.0, f0: float = 0.0,
           gx: float = 1.0, g0: float = 0.0) -> FbsdeSpec:
    """Scalar linear FBSDE with deterministic coefficients.

    ``b = bx x + by y + bz z + b0``, ``sigma = s0 + sx x + sy y``, ``A(z) = a z``,
    ``f = fx x + fy y + fz z + f0`` and ``g = gx x + g0``.
    """

    def b(k, path, x, y, z):
        return bx * x + by * y + bz * z[:, :, 0] + b0

    def sigma(k, path, x, y):
        return _col(s0 + sx * x[:, 0] + sy * y[:, 0])

    def A(k, path, z):
        return a * z

    def f(k, path, x, y, z):
        return fx * x + fy * y + fz * z[:, :, 0] + f0

    def g(path, x):
        return gx * x + g0

    params = dict(x0=x0, bx=bx, by=by, bz=bz, b0=b0, s0=s0, sx=sx, sy=sy, a=a,
                  fx=fx, fy=fy, fz=fz, f0=f0, gx=gx, g0=g0)
    lip = Lipschitz((abs(bx), abs(by), abs(bz)), (abs(sx), abs(sy), abs(a)),
                    (abs(fx), abs(fy), abs(fz)), abs(gx))
    return FbsdeSpec(1, 1, 1, np.array([x0]), sigma, A, g, b, f, lip, True, "linear", params)


def martingale(x0: float = 0.0) -> FbsdeSpec:
    """``b = 0, sigma = 1, A = 0, f = 0, g(x) = x``: ``X = Y = W`` and ``Z = 1``."""
    spec = linear(x0=x0, s0=1.0, gx=1.0)
    spec.name = "martingale"
    return spec


def affine_random(x0: float = 0.0, kappa: float = 0.5, eta: float = 0.2, s0: float = 1.0,
                  s1: float = 0.3, a: float = 0.3, lam: float = 0.5, gx: float = 1.0,
                  gw: float = 0.5) -> FbsdeSpec:
    """Coefficients driven by the path through ``W_u``.

    ``b = -kappa x + eta sin(W_u)``, ``sigma = s0 + s1 cos(W_u)``, ``A(z) = a z``,
    ``f = -lam y + eta cos(W_u)`` and ``g = gx x + gw tanh(W_T)``.
    """

    def w(path, k):
        return path.values[:, k, :1]

    def b(k, path, x, y, z):
        return -kappa * x + eta * np.sin(w(path, k))

    def sigma(k, path, x, y):
        return _col(s0 + s1 * np.cos(w(path, k)[:, 0]))

    def A(k, path, z):
        return a * z

    def f(k, path, x, y, z):
        return -lam * y + eta * np.cos(w(path, k))

    def g(path, x):
        return gx * x + gw * np.tanh(path.values[:, -1, :1])

    params = dict(x0=x0, kappa=kappa, eta=eta, s0=s0, s1=s1, a=a, lam=lam, gx=gx, gw=gw)
    lip = Lipschitz((abs(kappa), 0.0, 0.0), (0.0, 0.0, abs(a)), (0.0, abs(lam), 0.0), abs(gx))
    return FbsdeSpec(1, 1, 1, np.array([x0]), sigma, A, g, b, f, lip, False, "affine_random", params)


def trig_bounded(x0: float = 0.0, beta: float = 0.5, s0: float = 1.0, s1: float = 0.3,
                 a: float = 0.4, gamma: float = 0.5, phase: float = 0.3,
                 omega: float = 0.5) -> FbsdeSpec:
    """Bounded smooth coefficients with spatial frequency ``omega``.

    ``b = beta sin(omega x)``, ``sigma = s0 + s1 cos(omega y)``, ``A(z) = a z``,
    ``f = gamma cos(omega (x + y))`` and ``g = sin(omega x + phase) + x / 2``.
    A low frequency keeps the coefficients well resolved by low-degree
    polynomial regression over the spread of the forward state.
    """

    def b(k, path, x, y, z):
        return beta * np.sin(omega * x)

    def sigma(k, path, x, y):
        return _col(s0 + s1 * np.cos(omega * y[:, 0]))

    def A(k, path, z):
        return a * z

    def f(k, path, x, y, z):
        return gamma * np.cos(omega * (x + y))

    def g(path, x):
        return np.sin(omega * x + phase) + 0.5 * x

    params = dict(x0=x0, beta=beta, s0=s0, s1=s1, a=a, gamma=gamma, phase=phase, omega=omega)
    w = abs(omega)
    lip = Lipschitz((abs(beta) * w, 0.0, 0.0), (0.0, abs(s1) * w, abs(a)),
                    (abs(gamma) * w, abs(gamma) * w, 0.0), w + 0.5)
    return FbsdeSpec(1, 1, 1, np.array([x0]), sigma, A, g, b, f, lip, True, "trig_bounded", params)


SPECS = {
    "martingale": martingale,
    "linear": linear,
    "affine_random": affine_random,
    "trig_bounded": trig_bounded,
}


def build_spec(name: str, **params) -> FbsdeSpec:
    """Instantiate a built-in spec by name; unknown names raise a configuration error."""
    try:
        factory = SPECS[name]
    except KeyError:
        raise ConfigurationError(f"unknown spec {name!r}; choose from {sorted(SPECS)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for spec {name!r}: {exc}") from None

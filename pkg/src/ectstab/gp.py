"""Gaussian-process regression with analytic kernel derivatives.

Kernels act on a one-dimensional parameter domain: the circle (period 2*pi)
for closed curves or the unit interval for open arcs.  Partial derivatives
are indexed by ``(a, b)``: ``a`` derivatives in the first argument and ``b``
in the second, so ``(1, 1)`` is k_xy and ``(2, 2)`` is k_xxyy.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite_e
from scipy.linalg import cho_solve, solve_triangular

from ectstab.errors import DerivativeError, GpFitError

__all__ = [
    "Kernel",
    "StationaryKernel",
    "SineSquaredExpKernel",
    "SquaredExpKernel",
    "PushforwardKernel",
    "kernel_eval",
    "kernel_partials",
    "gram",
    "GpModel",
    "fit",
    "posterior_mean",
    "posterior_var",
    "posterior_cov",
    "posterior_mean_derivative",
    "derivative_posterior_var",
    "sample_posterior",
    "kernel_metric",
]

JITTER_START = 1e-12
JITTER_MAX = 1e-6
SAMPLE_JITTER = 1e-10


class Kernel:
    """Symmetric positive-semidefinite kernel on a 1-D parameter domain."""

    domain = "interval"
    max_order = (0, 0)

    def partial(self, s, t, order: tuple[int, int] = (0, 0)) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, s, t) -> np.ndarray:
        return self.partial(s, t, (0, 0))

    def _check_order(self, order: tuple[int, int]) -> None:
        a, b = order
        ma, mb = self.max_order
        if a < 0 or b < 0 or a > ma or b > mb:
            raise DerivativeError(f"{type(self).__name__} has no partial of order {order}")

    def describe(self) -> dict:
        return {"type": type(self).__name__}


class StationaryKernel(Kernel):
    """k(s, t) = phi(s - t); then d^a/ds^a d^b/dt^b k = (-1)^b phi^(a+b)(s - t)."""

    max_order = (2, 2)

    def phi(self, r: np.ndarray, n: int) -> np.ndarray:
        raise NotImplementedError

    def partial(self, s, t, order=(0, 0)):
        self._check_order(order)
        a, b = order
        r = np.subtract(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        out = self.phi(r, a + b)
        return -out if b % 2 else out


@dataclass(frozen=True)
class SineSquaredExpKernel(StationaryKernel):
    """``amplitude2 * exp(-gamma * sin^2((s - t) / 2))`` on the circle.

    Written as ``amplitude2 * exp(-c) * exp(c cos r)`` with ``c = gamma / 2``,
    whose derivatives follow from Faa di Bruno with g = c cos r.
    """

    amplitude2: float = 1.0
    gamma: float = 2.0
    domain = "circle"

    def __post_init__(self):
        if not (self.amplitude2 > 0 and self.gamma > 0):
            raise ValueError("amplitude2 and gamma must be positive")

    def phi(self, r, n):
        c = self.gamma / 2.0
        e = self.amplitude2 * np.exp(c * (np.cos(r) - 1.0))
        if n == 0:
            return e
        sn, cs = np.sin(r), np.cos(r)
        g1, g2, g3, g4 = -c * sn, -c * cs, c * sn, c * cs
        if n == 1:
            poly = g1
        elif n == 2:
            poly = g2 + g1**2
        elif n == 3:
            poly = g3 + 3 * g1 * g2 + g1**3
        elif n == 4:
            poly = g4 + 4 * g1 * g3 + 3 * g2**2 + 6 * g1**2 * g2 + g1**4
        else:
            raise DerivativeError(f"derivative order {n} not available")
        return poly * e

    def describe(self):
        return {"type": "sine_squared_exp", "amplitude2": self.amplitude2, "gamma": self.gamma}


@dataclass(frozen=True)
class SquaredExpKernel(StationaryKernel):
    """``amplitude2 * exp(-(s - t)^2 / (2 lengthscale^2))`` on [0, 1]."""

    amplitude2: float = 1.0
    lengthscale: float = 0.2
    domain = "interval"

    def __post_init__(self):
        if not (self.amplitude2 > 0 and self.lengthscale > 0):
            raise ValueError("amplitude2 and lengthscale must be positive")

    def phi(self, r, n):
        if n > 4:
            raise DerivativeError(f"derivative order {n} not available")
        x = r / self.lengthscale
        coef = np.zeros(n + 1)
        coef[n] = 1.0
        # probabilists' Hermite: d^n/dx^n exp(-x^2/2) = (-1)^n He_n(x) exp(-x^2/2)
        return self.amplitude2 * (-1.0 / self.lengthscale) ** n * hermite_e.hermeval(x, coef) * np.exp(-0.5 * x * x)

    def describe(self):
        return {"type": "squared_exp", "amplitude2": self.amplitude2, "lengthscale": self.lengthscale}


@dataclass(frozen=True)
class PushforwardKernel(Kernel):
    """``k(s, t) = amplitude2 * exp(-|f(s) - f(t)|^2 / (2 lengthscale^2))`` for a
    reference embedding ``f`` of the parameter domain into R^D.

    ``f`` and its derivative ``df`` map an array of shape (m,) to (m, D).
    Only first partials (k_x, k_y, k_xy) are provided.
    """

    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    amplitude2: float = 1.0
    lengthscale: float = 1.0
    domain: str = "circle"
    max_order = (1, 1)

    def partial(self, s, t, order=(0, 0)):
        self._check_order(order)
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        shape = s.shape
        s, t = s.ravel(), t.ravel()
        fs, ft = np.atleast_2d(self.f(s)), np.atleast_2d(self.f(t))
        diff = fs - ft
        l2 = self.lengthscale**2
        k = self.amplitude2 * np.exp(-0.5 * np.einsum("ij,ij->i", diff, diff) / l2)
        if order == (0, 0):
            out = k
        else:
            dfs, dft = np.atleast_2d(self.df(s)), np.atleast_2d(self.df(t))
            ps = np.einsum("ij,ij->i", diff, dfs) / l2
            pt = np.einsum("ij,ij->i", diff, dft) / l2
            if order == (1, 0):
                out = -ps * k
            elif order == (0, 1):
                out = pt * k
            else:
                out = (np.einsum("ij,ij->i", dfs, dft) / l2 - ps * pt) * k
        return out.reshape(shape)

    def describe(self):
        return {"type": "pushforward", "amplitude2": self.amplitude2, "lengthscale": self.lengthscale}


def kernel_eval(k: Kernel, s, t):
    return k(s, t)


def kernel_partials(k: Kernel, s, t) -> tuple:
    """(k_x, k_y, k_xy, k_xx, k_xxyy) at (s, t)."""
    return tuple(k.partial(s, t, o) for o in [(1, 0), (0, 1), (1, 1), (2, 0), (2, 2)])


def gram(k: Kernel, s, t=None, order=(0, 0)) -> np.ndarray:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = s if t is None else np.atleast_1d(np.asarray(t, dtype=float))
    return k.partial(s[:, None], t[None, :], order)


# --- posterior ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GpModel:
    """Fitted GP.  ``Y`` has shape (n, p); all p outputs share the kernel and noise."""

    kernel: Kernel
    params: np.ndarray
    Y: np.ndarray
    sigma2: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    single_output: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.params)

    def B(self) -> np.ndarray:
        return gram(self.kernel, self.params) + self.sigma2 * np.eye(self.n)

    def factorization_residual(self) -> float:
        """max |B + jitter I - L L^T|."""
        if self.n == 0:
            return 0.0
        return float(np.abs(self.B() + self.jitter * np.eye(self.n) - self.chol @ self.chol.T).max())

    def _out(self, x: np.ndarray) -> np.ndarray:
        return x[..., 0] if self.single_output else x


def _cholesky(B: np.ndarray) -> tuple[np.ndarray, float]:
    n = len(B)
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(B + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise GpFitError(
                    f"Cholesky failed up to jitter {JITTER_MAX:g}; condition estimate {np.linalg.cond(B):.3e}"
                ) from None


def fit(k: Kernel, params, y, sigma2: float) -> GpModel:
    """Condition a zero-mean GP prior on observations ``y`` at ``params``.

    ``y`` is (n,) for one output or (n, p) for p outputs.  ``n = 0`` gives the
    prior.  Factorises ``B = K + sigma2 I``, adding jitter 1e-12, 1e-11, ...,
    1e-6 only if plain Cholesky fails; the jitter used is stored on the model.
    """
    if not (sigma2 > 0 and math.isfinite(sigma2)):
        raise ValueError(f"sigma2 must be positive, got {sigma2!r}")
    params = np.asarray(params, dtype=float).ravel()
    Y = np.asarray(y, dtype=float)
    single = Y.ndim == 1
    if single:
        Y = Y.reshape(-1, 1)
    elif Y.ndim != 2:
        raise ValueError("y must be 1-D or 2-D")
    if len(Y) != len(params):
        raise ValueError(f"{len(params)} parameters but {len(Y)} observations")
    if not (np.isfinite(params).all() and np.isfinite(Y).all()):
        raise ValueError("non-finite training data")
    n = len(params)
    if n == 0:
        L = np.zeros((0, 0))
        alpha = np.zeros((0, Y.shape[1]))
        jitter = 0.0
    else:
        B = gram(k, params) + sigma2 * np.eye(n)
        L, jitter = _cholesky(B)
        alpha = cho_solve((L, True), Y)
    for a in (params, Y, L, alpha):
        a.setflags(write=False)
    return GpModel(k, params, Y, float(sigma2), L, alpha, jitter, single)


def _probes(t) -> np.ndarray:
    return np.atleast_1d(np.asarray(t, dtype=float)).ravel()


def _scalar_or(t, out):
    return out[0] if np.ndim(t) == 0 else out


def posterior_mean(model: GpModel, t):
    tt = _probes(t)
    out = model._out(gram(model.kernel, tt, model.params) @ model.alpha)
    return _scalar_or(t, out)


def posterior_mean_derivative(model: GpModel, t, order: int = 1):
    """d^order/dt^order of the posterior mean: ``K_x(t, a) B^-1 y`` for order 1."""
    tt = _probes(t)
    out = model._out(gram(model.kernel, tt, model.params, (order, 0)) @ model.alpha)
    return _scalar_or(t, out)


def _reduced_var(model: GpModel, prior: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """``prior - diag(left B^-1 right)`` with left (m, n), right (n, m), clamped at 0."""
    if model.n == 0:
        v = prior
    else:
        vl = solve_triangular(model.chol, left.T, lower=True)
        vr = solve_triangular(model.chol, right, lower=True)
        v = prior - np.einsum("ij,ij->j", vl, vr)
    return np.maximum(v, 0.0)


def posterior_var(model: GpModel, t):
    tt = _probes(t)
    k = model.kernel
    K = gram(k, tt, model.params)
    out = _reduced_var(model, k(tt, tt), K, K.T)
    return _scalar_or(t, out)


def posterior_cov(model: GpModel, t) -> np.ndarray:
    tt = _probes(t)
    prior = gram(model.kernel, tt)
    if model.n == 0:
        return prior
    V = solve_triangular(model.chol, gram(model.kernel, model.params, tt), lower=True)
    C = prior - V.T @ V
    return 0.5 * (C + C.T)


def derivative_posterior_var(model: GpModel, t, order: int = 1):
    """Variance of the order-th derivative of the posterior process.

    order 1: ``k_xy(t,t) - K_x(t,a) B^-1 K_y(a,t)``; order 2 uses k_xxyy,
    K_xx and K_yy in the same way.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    tt = _probes(t)
    k = model.kernel
    prior = k.partial(tt, tt, (order, order))
    left = gram(k, tt, model.params, (order, 0))
    right = gram(k, model.params, tt, (0, order))
    out = _reduced_var(model, prior, left, right)
    return _scalar_or(t, out)


def sample_posterior(model: GpModel, probes, n_samples: int = 1, seed=0) -> np.ndarray:
    """Joint posterior draws at ``probes``.

    Returns shape (n_samples, m) for a single-output model, else
    (n_samples, m, p) with outputs drawn independently.  ``seed`` may be an
    int, SeedSequence or Generator.
    """
    tt = _probes(probes)
    if len(tt) < 1:
        raise ValueError("need at least one probe")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mean = gram(model.kernel, tt, model.params) @ model.alpha  # (m, p)
    C = posterior_cov(model, tt) + SAMPLE_JITTER * np.eye(len(tt))
    try:
        Lc = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise GpFitError(f"posterior covariance factorisation failed: {exc}") from None
    p = mean.shape[1]
    z = rng.standard_normal((n_samples, p, len(tt)))
    draws = mean.T[None, :, :] + z @ Lc.T  # (s, p, m)
    draws = np.transpose(draws, (0, 2, 1))
    return draws[..., 0] if model.single_output else draws


def kernel_metric(k: Kernel, s, t):
    """``sqrt(k(t,t) + k(s,s) - 2 k(s,t))``, clamped at 0 under the root."""
    d2 = k(t, t) + k(s, s) - 2.0 * k(s, t)
    return np.sqrt(np.maximum(d2, 0.0))

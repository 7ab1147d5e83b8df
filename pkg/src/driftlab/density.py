"""Relative densities with respect to the standard Gaussian and their heat flow.

A relative density is a nonnegative f with  int f dgamma_n = 1.  Each variant
knows how to evaluate  log P_t f  (P_t the heat semigroup,
P_t f(x) = E f(x + B_t)),  and its gradient and Hessian in x.  Everything is
computed in log-space first; values below ``LOG_FLOOR`` count as underflow.

Point arrays have shape (..., n); for one-dimensional densities a bare scalar
or a flat array of points is also accepted.
"""
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, optimize
from scipy.special import log_ndtr, logsumexp, ndtr

from .errors import DegenerateDensityError, UnsupportedDimensionError

LOG_FLOOR = -700.0
GH_ORDER = 64
MAX_QUADRATURE_DIM = 3
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x


def log1mexp(d):
    """log(1 - exp(d)) for d <= 0, accurate at both ends."""
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.where(d > -math.log(2), np.log(-np.expm1(d)), np.log1p(-np.exp(d)))


def log_gauss_mass(lo, hi):
    """log(Phi(hi) - Phi(lo)) for lo <= hi, stable in both tails."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    la, lb = log_ndtr(a), log_ndtr(b)
    with np.errstate(invalid="ignore"):
        out = lb + log1mexp(la - lb)
    return np.where(hi > lo, out, -np.inf)


def gauss_mass(lo, hi):
    """gamma_1((lo, hi)) without cancellation in the upper tail."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return np.where(lo > 0, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


def _log_phi(z):
    return -0.5 * z * z - _LOG_SQRT_2PI


class RelativeDensity:
    """Interface shared by the density variants.

    Subclasses provide ``dim`` and ``log_heat``; gradients and Hessians fall
    back to central finite differences of ``log_heat``.
    """

    dim = 1

    def log_f(self, x):
        return self.log_heat(0.0, x)

    def log_heat(self, t, x):
        raise NotImplementedError

    def log_heat_and_grad(self, t, x):
        return self.log_heat(t, x), self.grad_log_heat(t, x)

    def grad_log_heat(self, t, x):
        x = as_points(x, self.dim)
        h = 1e-5 * (1 + np.linalg.norm(x, axis=-1, keepdims=True))
        out = np.empty_like(x)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = 1.0
            out[..., i] = (
                self.log_heat(t, x + h * e) - self.log_heat(t, x - h * e)
            ) / (2 * h[..., 0])
        return out

    def hess_log_heat(self, t, x):
        x = as_points(x, self.dim)
        h = (1e-4 * (1 + np.linalg.norm(x, axis=-1)))[..., None, None]
        n = self.dim
        out = np.empty(x.shape + (n,))
        eye = np.eye(n)
        L0 = self.log_heat(t, x)
        for i in range(n):
            hi = h[..., 0, 0][..., None] * eye[i]
            out[..., i, i] = (
                self.log_heat(t, x + hi) - 2 * L0 + self.log_heat(t, x - hi)
            ) / h[..., 0, 0] ** 2
            for j in range(i + 1, n):
                hj = h[..., 0, 0][..., None] * eye[j]
                val = (
                    self.log_heat(t, x + hi + hj)
                    - self.log_heat(t, x + hi - hj)
                    - self.log_heat(t, x - hi + hj)
                    + self.log_heat(t, x - hi - hj)
                ) / (4 * h[..., 0, 0] ** 2)
                out[..., i, j] = out[..., j, i] = val
        return out

    # 1D helpers -----------------------------------------------------------
    def breakpoints(self):
        """Points where the 1D integrands change character (quadrature hints)."""
        return ()

    def endpoint_cdf(self, x):
        """CDF of the probability measure f dgamma_1."""
        if self.dim != 1:
            raise UnsupportedDimensionError("endpoint_cdf is one-dimensional")
        return self._cdf_table(np.asarray(x, dtype=float))

    @cached_property
    def _cdf_grid(self):
        # cumulative Gauss-Legendre table, cell width 0.01 on [-14, 14]
        edges = np.linspace(-14.0, 14.0, 2801)
        nodes, weights = np.polynomial.legendre.leggauss(10)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        pts = mid[:, None] + half[:, None] * nodes[None, :]
        vals = np.exp(self.log_f(pts.ravel()) + _log_phi(pts.ravel())).reshape(pts.shape)
        cells = (vals * weights).sum(axis=1) * half
        cum = np.concatenate([[0.0], np.cumsum(cells)])
        return edges, cum

    def _cdf_table(self, x):
        edges, cum = self._cdf_grid
        xc = np.clip(x, edges[0], edges[-1])
        k = np.clip(np.searchsorted(edges, xc, side="right") - 1, 0, len(edges) - 2)
        nodes, weights = np.polynomial.legendre.leggauss(10)
        left = edges[k]
        half = 0.5 * (xc - left)
        pts = (left + half)[..., None] + half[..., None] * nodes
        part = (np.exp(self.log_f(pts) + _log_phi(pts)) * weights).sum(axis=-1) * half
        return np.clip(cum[k] + part, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class GaussianMixture(RelativeDensity):
    """f dgamma_n = sum_i w_i N(m_i, s_i Id) with s_i in (0, 1].

    Heat flow, gradient and Hessian are exact.  Translates (s = 1) and
    scalings (m = 0) of the standard Gaussian are single components.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        s = np.atleast_1d(np.asarray(self.variances, dtype=float))
        m = np.asarray(self.means, dtype=float)
        if m.ndim == 0:
            m = m.reshape(1, 1)
        elif m.ndim == 1:
            m = m[:, None] if m.shape[0] == w.shape[0] else m[None, :]
        if not (w.shape[0] == s.shape[0] == m.shape[0]):
            raise ValueError("weights, means and variances must have one entry per component")
        if np.any(w <= 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(s <= 0) or np.any(s > 1):
            raise ValueError("component variances must lie in (0, 1]")
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", s)

    @classmethod
    def standard(cls, dim=1):
        """f = 1."""
        return cls([1.0], np.zeros((1, dim)), [1.0])

    @classmethod
    def translate(cls, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return cls([1.0], mu[None, :], [1.0])

    @classmethod
    def scaled(cls, sigma, dim=1):
        return cls([1.0], np.zeros((1, dim)), [sigma * sigma])

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.weights.shape[0]

    def _components(self, t, x):
        s = self.variances
        a = (1 - s) / s
        b = self.means / s[:, None]
        c = 1 + a * t
        n = self.dim
        x2 = np.sum(x * x, axis=-1)[..., None]
        xb = np.sum(x[..., None, :] * b, axis=-1)
        b2 = np.sum(b * b, axis=-1)
        m2 = np.sum(self.means ** 2, axis=-1)
        logc = (
            np.log(self.weights)
            - 0.5 * n * np.log(s)
            - m2 / (2 * s)
            - 0.5 * n * np.log(c)
            + (-0.5 * a * x2 + xb + 0.5 * t * b2) / c
        )
        grads = (b - a[:, None] * x[..., None, :]) / c[:, None]
        return logc, grads, a / c

    def log_heat(self, t, x):
        x = as_points(x, self.dim)
        logc, _, _ = self._components(t, x)
        return logsumexp(logc, axis=-1)

    def log_heat_and_grad(self, t, x):
        x = as_points(x, self.dim)
        logc, grads, _ = self._components(t, x)
        L = logsumexp(logc, axis=-1, keepdims=True)
        return L[..., 0], np.sum(np.exp(logc - L)[..., None] * grads, axis=-2)

    def grad_log_heat(self, t, x):
        x = as_points(x, self.dim)
        logc, grads, _ = self._components(t, x)
        pi = np.exp(logc - logsumexp(logc, axis=-1, keepdims=True))
        return np.sum(pi[..., None] * grads, axis=-2)

    def hess_log_heat(self, t, x):
        x = as_points(x, self.dim)
        logc, grads, curv = self._components(t, x)
        pi = np.exp(logc - logsumexp(logc, axis=-1, keepdims=True))
        gbar = np.sum(pi[..., None] * grads, axis=-2)
        second = np.sum(pi[..., None, None] * grads[..., :, None] * grads[..., None, :], axis=-3)
        eye = np.eye(self.dim)
        return (
            -np.sum(pi * curv, axis=-1)[..., None, None] * eye
            + second
            - gbar[..., :, None] * gbar[..., None, :]
        )

    def endpoint_cdf(self, x):
        if self.dim != 1:
            raise UnsupportedDimensionError("endpoint_cdf is one-dimensional")
        x = np.asarray(x, dtype=float)[..., None]
        z = (x - self.means[:, 0]) / np.sqrt(self.variances)
        return np.sum(self.weights * ndtr(z), axis=-1)

    def breakpoints(self):
        return tuple(self.means[:, 0]) if self.dim == 1 else ()

    def walk_law(self, t):
        """Law of W_t under the drifted measure: mixture weights, means, variances.

        W is a Brownian motion reweighted by f(W_1); given W_1 ~ N(m, s) the
        path is a Brownian bridge, so W_t ~ N(t m, t^2 s + t(1 - t)).
        """
        return self.weights, t * self.means, t * t * self.variances + t * (1 - t)


@dataclass(frozen=True, eq=False)
class SmoothedIndicator1D(RelativeDensity):
    """f = P_tau0(1_S) / int P_tau0(1_S) dgamma_1 for a finite union S of intervals.

    P_t f = P_{t + tau0} 1_S / Z, so the heat flow is a sum of Gaussian cdf
    differences and its log-derivatives are available in closed form.
    ``method="gauss-hermite"`` switches the heat flow to quadrature of f.
    """

    intervals: tuple
    tau0: float
    method: str = "exact"
    gh_order: int = GH_ORDER

    def __post_init__(self):
        iv = sorted((float(a), float(b)) for a, b in self.intervals)
        if not iv:
            raise ValueError("need at least one interval")
        for (a, b), (c, _) in zip(iv, iv[1:] + [(math.inf, math.inf)]):
            if not a < b:
                raise ValueError(f"empty interval ({a}, {b})")
            if b > c:
                raise ValueError("intervals must be disjoint")
        if not 0 < self.tau0 < 1:
            raise ValueError("tau0 must lie in (0, 1)")
        if self.method not in ("exact", "gauss-hermite"):
            raise ValueError(f"unknown heat method {self.method!r}")
        object.__setattr__(self, "intervals", tuple(iv))
        lo = np.array([a for a, _ in iv])
        hi = np.array([b for _, b in iv])
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)
        r = math.sqrt(1 + self.tau0)
        object.__setattr__(self, "log_norm", float(logsumexp(log_gauss_mass(lo / r, hi / r))))

    dim = 1

    def _log_mass(self, t, x):
        """log P_{t+tau0} 1_S(x) (unnormalized) and the standardized endpoints."""
        sd = math.sqrt(t + self.tau0)
        za = (self._lo - x) / sd
        zb = (self._hi - x) / sd
        return logsumexp(log_gauss_mass(za, zb), axis=-1), za, zb, sd

    def log_heat(self, t, x):
        x = as_points(x, 1)
        if self.method == "gauss-hermite" and t > 0:
            return _gh_log_heat(self, t, x)
        L, _, _, _ = self._log_mass(t, x)
        return L - self.log_norm

    def grad_log_heat(self, t, x):
        x = as_points(x, 1)
        if self.method == "gauss-hermite" and t > 0:
            return RelativeDensity.grad_log_heat(self, t, x)
        L, za, zb, sd = self._log_mass(t, x)
        L = L[..., None]
        ra = np.exp(_log_phi(za) - L)
        rb = np.exp(_log_phi(zb) - L)
        return (np.sum(ra - rb, axis=-1) / sd)[..., None]

    def hess_log_heat(self, t, x):
        x = as_points(x, 1)
        if self.method == "gauss-hermite" and t > 0:
            return RelativeDensity.hess_log_heat(self, t, x)
        L, za, zb, sd = self._log_mass(t, x)
        L = L[..., None]
        ra = np.exp(_log_phi(za) - L)
        rb = np.exp(_log_phi(zb) - L)
        first = np.sum(ra - rb, axis=-1) / sd
        zra = np.where(np.isfinite(za), za * ra, 0.0)
        zrb = np.where(np.isfinite(zb), zb * rb, 0.0)
        second = np.sum(zra - zrb, axis=-1) / sd ** 2
        return (second - first ** 2)[..., None, None]

    def breakpoints(self):
        return tuple(v for ab in self.intervals for v in ab if math.isfinite(v))


@dataclass(frozen=True, eq=False)
class GridDensity1D(RelativeDensity):
    """log f given on a uniform grid, piecewise linear in between.

    Outside [x_min, x_max] the boundary segment is extended linearly.  Because
    log f is piecewise affine, every Gaussian integral against f splits into
    cdf differences; normalization, heat flow and cdf are computed that way.
    Evaluation is clamped below at ``log_floor``.
    """

    x_min: float
    x_max: float
    log_values: np.ndarray
    log_floor: float = LOG_FLOOR
    method: str = "exact"
    gh_order: int = GH_ORDER

    def __post_init__(self):
        L = np.asarray(self.log_values, dtype=float)
        if L.ndim != 1 or L.shape[0] < 2:
            raise ValueError("need at least two grid values")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if np.any(np.isnan(L)) or np.any(L == np.inf):
            raise ValueError("log values must be finite or -inf")
        if self.method not in ("exact", "gauss-hermite"):
            raise ValueError(f"unknown heat method {self.method!r}")
        xs = np.linspace(self.x_min, self.x_max, L.shape[0])
        lo, hi, c, k = _log_affine_segments(xs, L)
        logz = float(logsumexp(_segment_log_gauss_integral(lo, hi, c, k)))
        if not math.isfinite(logz):
            raise DegenerateDensityError("grid density has no mass")
        object.__setattr__(self, "log_values", L - logz)
        object.__setattr__(self, "_xs", xs)
        object.__setattr__(self, "_seg", (lo, hi, c - logz, k))

    dim = 1

    @classmethod
    def from_function(cls, log_fn, x_min, x_max, m, **kw):
        xs = np.linspace(x_min, x_max, m)
        return cls(x_min, x_max, log_fn(xs), **kw)

    @classmethod
    def from_csv(cls, path, **kw):
        data = np.genfromtxt(path, delimiter=",", names=True)
        x, lf = data["x"], data["log_f"]
        if not np.allclose(np.diff(x), (x[-1] - x[0]) / (len(x) - 1), rtol=1e-9, atol=1e-12):
            raise ValueError("grid file must use a uniform x grid")
        return cls(float(x[0]), float(x[-1]), lf, **kw)

    @property
    def grid(self):
        return self._xs

    def log_f(self, x):
        x = as_points(x, 1)[..., 0]
        xs, L = self._xs, self.log_values
        inner = np.interp(x, xs, L)
        with np.errstate(invalid="ignore"):
            left = L[0] + (L[1] - L[0]) * (x - xs[0]) / (xs[1] - xs[0])
            right = L[-1] + (L[-1] - L[-2]) * (x - xs[-1]) / (xs[-1] - xs[-2])
        out = np.where(x < xs[0], left, np.where(x > xs[-1], right, inner))
        out = np.where(np.isnan(out), -np.inf, out)
        return np.maximum(out, self.log_floor)

    def log_heat(self, t, x):
        x = as_points(x, 1)
        if t == 0:
            return self.log_f(x)
        if self.method == "gauss-hermite":
            return _gh_log_heat(self, t, x)
        lo, hi, c, k = self._seg
        terms = _segment_log_gauss_integral(lo, hi, c, k, x, t)
        return np.maximum(logsumexp(terms, axis=-1), self.log_floor)

    def endpoint_cdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        lo, hi, c, k = self._seg
        terms = _segment_log_gauss_integral(lo, np.minimum(hi, x), c, k)
        return np.clip(np.exp(logsumexp(terms, axis=-1)), 0.0, 1.0)

    def breakpoints(self):
        return (self.x_min, self.x_max)


def _log_affine_segments(xs, L):
    """Segments (lo, hi, c, k) with log f = c + k x on (lo, hi), tails included."""
    with np.errstate(invalid="ignore"):
        k = np.diff(L) / np.diff(xs)
        c = L[:-1] - k * xs[:-1]
    lo = np.concatenate([[-np.inf], xs[:-1], [xs[-1]]])
    hi = np.concatenate([[xs[0]], xs[1:], [np.inf]])
    k = np.concatenate([[k[0]], k, [k[-1]]])
    c = np.concatenate([[c[0]], c, [c[-1]]])
    dead = ~np.isfinite(k) | ~np.isfinite(c)
    return lo[~dead], hi[~dead], c[~dead], k[~dead]


def _segment_log_gauss_integral(lo, hi, c, k, x=None, t=0.0):
    """log E[exp(c + k Y) 1{lo < Y < hi}] per segment.

    Y ~ N(0, 1) when ``x`` is None, otherwise Y ~ N(x, t) with ``x`` shaped to
    broadcast against the segment axis.
    """
    if x is None:
        return c + 0.5 * k * k + log_gauss_mass(lo - k, hi - k)
    sd = math.sqrt(t)
    shift = x + k * t
    return c + k * x + 0.5 * k * k * t + log_gauss_mass((lo - shift) / sd, (hi - shift) / sd)


def _gh_log_heat(d, t, x):
    nodes, weights = np.polynomial.hermite.hermgauss(d.gh_order)
    pts = x[..., 0][..., None] + math.sqrt(2 * t) * nodes
    vals = d.log_f(pts) + np.log(weights) - 0.5 * math.log(math.pi)
    return logsumexp(vals, axis=-1)


# ---------------------------------------------------------------------------
# integration helpers


def _quad_line(fun, points=(), scale=1.0, center=0.0):
    """Integral of a scalar function over the real line, split at ``points``."""
    span = 14.0 * scale
    pts = sorted({float(p) for p in points if abs(p - center) < span})
    lo, hi = center - span, center + span
    total, _ = integrate.quad(fun, lo, hi, points=pts or None, limit=400, epsabs=1e-11, epsrel=1e-10)
    for a, b in ((-np.inf, lo), (hi, np.inf)):
        part, _ = integrate.quad(fun, a, b, limit=200, epsabs=1e-12)
        total += part
    return total


def gaussian_expectation(fun, mean, var, order=48, mc_samples=200_000):
    """E fun(Y) for Y ~ N(mean, var Id); ``fun`` maps (..., n) -> (...).

    1D uses adaptive quadrature, n <= 3 a tensor Gauss-Hermite rule, larger n
    a fixed-seed Monte Carlo average.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    n = mean.shape[0]
    sd = math.sqrt(var)
    if sd == 0:
        return float(fun(mean[None, :])[0])
    if n == 1:
        g = lambda z: float(fun(np.array([[mean[0] + sd * z]]))[0]) * math.exp(_log_phi(z))
        return _quad_line(g)
    if n <= MAX_QUADRATURE_DIM:
        nodes, weights = np.polynomial.hermite.hermgauss(order)
        grids = np.meshgrid(*([nodes] * n), indexing="ij")
        pts = mean + math.sqrt(2) * sd * np.stack([g.ravel() for g in grids], axis=-1)
        w = np.ones(1)
        for _ in range(n):
            w = np.multiply.outer(w, weights).ravel()
        return float(np.sum(w * fun(pts)) / math.pi ** (n / 2))
    rng = np.random.default_rng(0)
    pts = mean + sd * rng.standard_normal((mc_samples, n))
    return float(np.mean(fun(pts)))


def _check_density(d):
    if not isinstance(d, RelativeDensity):
        raise TypeError(f"expected a RelativeDensity, got {type(d).__name__}")


# ---------------------------------------------------------------------------
# operations


def eval_f(d, x):
    return np.exp(d.log_f(x))


def heat_eval(d, t, x):
    """P_t f(x); t must lie in [0, 1]."""
    if not 0 <= t <= 1:
        raise ValueError(f"heat time must lie in [0, 1], got {t}")
    if t == 0:
        return eval_f(d, x)
    return np.exp(d.log_heat(t, x))


def _guard(d, t, x):
    L = d.log_heat(t, x)
    if np.any(L <= LOG_FLOOR):
        raise DegenerateDensityError(f"log P_{t} f underflows the log-floor")


def grad_log_heat(d, t, x):
    """Gradient of log P_t f at x, for t in [0, 1)."""
    if not 0 <= t < 1:
        raise ValueError(f"t must lie in [0, 1), got {t}")
    _guard(d, t, x)
    return d.grad_log_heat(t, x)


def hessian_log_heat(d, t, x):
    """Hessian of log P_t f at x; its spectrum is bounded below by -1/t."""
    if not 0 < t <= 1:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    _guard(d, t, x)
    return d.hess_log_heat(t, x)


def ou_eval(d, t, x):
    """Ornstein-Uhlenbeck smoothing U_t f(x) = P_{1-e^{-2t}} f(e^{-t} x)."""
    if t < 0:
        raise ValueError("OU time must be nonnegative")
    x = as_points(x, d.dim)
    return heat_eval(d, -math.expm1(-2 * t), math.exp(-t) * x)


def log_ou(d, t, x):
    x = as_points(x, d.dim)
    return d.log_heat(-math.expm1(-2 * t), math.exp(-t) * x)


def entropy(d):
    """Relative entropy  int f log f dgamma_n."""
    _check_density(d)
    if isinstance(d, GaussianMixture):
        n = d.dim
        if d.n_components == 1:
            s, m = d.variances[0], d.means[0]
            return 0.5 * (n * s + float(m @ m) - n - n * math.log(s))
        return sum(
            w * gaussian_expectation(d.log_f, m, s)
            for w, m, s in zip(d.weights, d.means, d.variances)
        )
    if isinstance(d, GridDensity1D):
        lo, hi, c, k = d._seg
        # int (c + k x) e^{c + k x} phi(x) dx per segment, in closed form
        mass = np.exp(_segment_log_gauss_integral(lo, hi, c, k))
        with np.errstate(invalid="ignore", over="ignore"):
            at_hi = np.where(np.isfinite(hi), np.exp(c + k * hi + _log_phi(hi)), 0.0)
            at_lo = np.where(np.isfinite(lo), np.exp(c + k * lo + _log_phi(lo)), 0.0)
        return float(np.sum((c + k * k) * mass - k * (at_hi - at_lo)))
    g = lambda x: _flogf_phi(d, x)
    return _quad_line(g, d.breakpoints())


def _flogf_phi(d, x):
    L = float(d.log_f(np.array([[x]]))[0])
    if L <= LOG_FLOOR:
        return 0.0
    return math.exp(L + _log_phi(x)) * L


def fisher_information(d, t):
    """E ||grad log P_{1-t} f(W_t)||^2 under the law of the drifted walk at time t.

    W_t has density P_{1-t} f against N(0, t Id); at t = 1 this is the usual
    Fisher information  int |grad f|^2 / f dgamma_n.
    """
    if not 0 <= t <= 1:
        raise ValueError("t must lie in [0, 1]")
    _check_density(d)
    tau = 1 - t
    sq = lambda x: np.sum(d.grad_log_heat(tau, x) ** 2, axis=-1)
    if t == 0:
        return float(sq(np.zeros((1, d.dim)))[0])
    if isinstance(d, GaussianMixture):
        w, m, v = d.walk_law(t)
        return float(sum(wi * gaussian_expectation(sq, mi, vi) for wi, mi, vi in zip(w, m, v)))
    if d.dim != 1:
        raise UnsupportedDimensionError("quadrature Fisher information needs n = 1")
    if isinstance(d, GridDensity1D) and t == 1:
        lo, hi, c, k = d._seg
        mass = np.exp(_segment_log_gauss_integral(lo, hi, c, k))
        return float(np.sum(mass * k * k))
    sd = math.sqrt(t)

    def g(z):
        x = np.array([[sd * z]])
        L = float(d.log_heat(tau, x)[0])
        if L <= LOG_FLOOR:
            return 0.0
        return float(sq(x)[0]) * math.exp(L + _log_phi(z))

    return _quad_line(g, [p / sd for p in d.breakpoints()], scale=1.0)


def estimate_beta(d, grid):
    """Largest negative curvature of log f seen on ``grid`` (a lower bound for beta)."""
    pts = as_points(grid, d.dim).reshape(-1, d.dim)
    if pts.shape[0] == 0:
        raise ValueError("grid must be nonempty")
    lam = np.linalg.eigvalsh(d.hess_log_heat(0.0, pts))[..., 0]
    return float(max(0.0, -np.min(lam)))


def superlevel_intervals(log_fn, level, lo=-40.0, hi=40.0, step=1e-3):
    """Intervals of {x : log_fn(x) > level} on the line.

    The function is scanned on a uniform grid and each sign change refined by
    Brent's method; sets narrower than ``step`` can be missed.  An interval
    touching the scan boundary is extended to infinity.
    """
    xs = np.arange(lo, hi + step / 2, step)
    vals = log_fn(xs) - level
    pos = vals > 0
    if not pos.any():
        return []
    g = lambda x: float(log_fn(np.float64(x)) - level)
    change = np.nonzero(pos[1:] != pos[:-1])[0]
    roots = [optimize.brentq(g, xs[i], xs[i + 1], xtol=1e-15, rtol=1e-15) for i in change]
    bounds = ([-np.inf] if pos[0] else []) + roots + ([np.inf] if pos[-1] else [])
    return list(zip(bounds[0::2], bounds[1::2]))


def interval_mass(intervals):
    return float(sum(gauss_mass(a, b) for a, b in intervals))


def tail_probability_exact(d, alpha):
    """gamma_1({f > alpha}) for a one-dimensional density."""
    if d.dim != 1:
        raise UnsupportedDimensionError("exact tail probabilities need n = 1")
    return interval_mass(superlevel_intervals(d.log_f, math.log(alpha)))

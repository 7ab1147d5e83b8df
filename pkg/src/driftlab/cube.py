"""Exact computations on the discrete cube {-1,1}^n with the uniform measure.

Values are stored as a flat table of length 2^n.  Bit i-1 of the index is
set when x_i = +1, so the prefix (x_1..x_t) of a point is its index modulo
2^t and conditional means over suffixes are plain column means.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from . import rng
from .errors import ConfigError, DegenerateDensityError, DegeneratePrefixError
from .tails import TailScan

MAX_N = 20
SAMPLE_CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class CubeFunction:
    n: int
    values: np.ndarray

    def __post_init__(self):
        if not (1 <= self.n <= MAX_N):
            raise ConfigError(f"cube dimension must be in [1, {MAX_N}], got {self.n}")
        v = np.asarray(self.values, dtype=float)
        if v.shape != (1 << self.n,):
            raise ConfigError(f"expected {1 << self.n} values, got {v.size}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ConfigError("cube values must be finite and nonnegative")
        mean = v.mean()
        if mean <= 0:
            raise DegenerateDensityError("cube function has zero mean")
        v = v / mean
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def size(self):
        return 1 << self.n

    def points(self):
        """(2^n, n) array of +-1 coordinates in index order."""
        idx = np.arange(self.size)[:, None]
        return np.where((idx >> np.arange(self.n)) & 1, 1.0, -1.0)

    def index_of(self, x):
        x = np.atleast_2d(x)
        return ((x > 0).astype(np.int64) << np.arange(self.n)).sum(axis=1)

    def prefix_means(self, t):
        """E[f | x_1..x_t] indexed by the prefix, length 2^t."""
        return prefix_means(self.values, t)

    # -- construction

    @classmethod
    def constant(cls, n):
        return cls(n, np.ones(1 << n))

    @classmethod
    def from_values(cls, values):
        values = np.asarray(values, dtype=float)
        n = int(round(math.log2(values.size)))
        return cls(n, values)

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or {"index", "value"} - set(rows[0]):
            raise ConfigError(f"{path}: expected columns index,value")
        idx = np.array([int(r["index"]) for r in rows])
        size = len(rows)
        n = int(round(math.log2(size)))
        if (1 << n) != size or sorted(idx) != list(range(size)):
            raise ConfigError(f"{path}: indices must cover 0..2^n-1 exactly once")
        values = np.empty(size)
        values[idx] = [float(r["value"]) for r in rows]
        return cls(n, values)

    @classmethod
    def random_positive(cls, n, seed, low=0.05, high=1.0):
        return cls(n, rng.stream(seed, 0).uniform(low, high, 1 << n))

    @classmethod
    def product(cls, n, biases=None, seed=0):
        """f(x) = prod_i (1 + a_i x_i) with |a_i| < 1."""
        a = rng.stream(seed, 0).uniform(-0.9, 0.9, n) if biases is None else np.asarray(biases, float)
        if a.shape != (n,) or np.any(np.abs(a) > 1):
            raise ConfigError("product biases must be n numbers in [-1, 1]")
        x = cls.constant(n).points()
        return cls(n, np.prod(1 + a * x, axis=1))

    @classmethod
    def indicator(cls, n, seed=0, p=0.5, members=None):
        """Normalized indicator of a set, random with density p unless members are given."""
        mask = np.zeros(1 << n, dtype=bool)
        if members is None:
            mask = rng.stream(seed, 0).random(1 << n) < p
            if not mask.any():
                mask[0] = True
        else:
            mask[np.asarray(members, dtype=int)] = True
        return cls(n, mask.astype(float))


def prefix_means(table, t):
    """Suffix averages of a flat table of length 2^n, indexed by the length-t prefix."""
    return table.reshape(-1, 1 << t).mean(axis=0)


def _check_coord(f, i):
    if not (1 <= i <= f.n):
        raise IndexError(f"coordinate {i} out of range 1..{f.n}")


def discrete_derivative(f, i):
    """(f(x | x_i = 1) - f(x | x_i = -1)) / 2 as a table over all x."""
    _check_coord(f, i)
    return _derivative(f.values, i)


def _derivative(table, i):
    v = table.reshape(-1, 2, 1 << (i - 1))
    d = 0.5 * (v[:, 1, :] - v[:, 0, :])
    return np.repeat(d[:, None, :], 2, axis=1).reshape(-1)


def coordinate_average(f, i):
    """f_i = (f(x | x_i = 1) + f(x | x_i = -1)) / 2."""
    _check_coord(f, i)
    v = f.values.reshape(-1, 2, 1 << (i - 1))
    m = v.mean(axis=1)
    return np.repeat(m[:, None, :], 2, axis=1).reshape(-1)


def drift_table(f, t):
    """v_t for every prefix of length t, and a mask of reachable prefixes."""
    nxt = f.prefix_means(t + 1)
    b, a = nxt[: 1 << t], nxt[1 << t :]
    s = a + b
    reach = s > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(reach, (a - b) / np.where(reach, s, 1.0), 0.0)
    return v, reach


@dataclass
class SampleTrace:
    bits: np.ndarray
    drift: np.ndarray
    M: np.ndarray

    @property
    def endpoint(self):
        return self.bits


def exact_sample(f, seed, index=0):
    """One draw of W with law f dmu through the sequential sampler."""
    u = rng.stream(seed, index).random(f.n)
    bits = np.empty(f.n)
    drift = np.empty(f.n)
    M = np.ones(f.n + 1)
    p = 0
    for t in range(f.n):
        v, reach = drift_table(f, t)
        if not reach[p]:
            raise DegeneratePrefixError(f"reached a prefix of probability 0 at step {t}")
        drift[t] = v[p]
        w = 1.0 if u[t] < 0.5 * (1 + v[p]) else -1.0
        bits[t] = w
        M[t + 1] = M[t] * (1 + v[p] * w)
        if w > 0:
            p |= 1 << t
    return SampleTrace(bits, drift, M)


def sample_many(f, n_samples, seed):
    """Endpoint indices of n_samples independent draws, one stream per chunk."""
    tables = [drift_table(f, t)[0] for t in range(f.n)]
    out = np.empty(n_samples, dtype=np.int64)
    for c, start in enumerate(range(0, n_samples, SAMPLE_CHUNK)):
        m = min(SAMPLE_CHUNK, n_samples - start)
        u = rng.stream(seed, c).random((m, f.n))
        p = np.zeros(m, dtype=np.int64)
        for t in range(f.n):
            up = u[:, t] < 0.5 * (1 + tables[t][p])
            p |= up.astype(np.int64) << t
        out[start : start + m] = p
    return out


@dataclass
class PathTables:
    """Per-endpoint quantities of the sampler, by enumeration over all 2^n points."""

    law: np.ndarray
    M: np.ndarray
    log_increments: np.ndarray
    abs_drift: np.ndarray
    sq_drift: np.ndarray
    drift_mean: np.ndarray
    degenerate: int = 0


def path_tables(f):
    idx = np.arange(f.size)
    law = np.ones(f.size)
    M = np.ones(f.size)
    logsum = np.zeros(f.size)
    abs_v, sq_v, mean_v = np.zeros(f.n), np.zeros(f.n), np.zeros(f.n)
    degenerate = 0
    for t in range(f.n):
        v, reach = drift_table(f, t)
        degenerate += int(np.count_nonzero(~reach))
        p = idx & ((1 << t) - 1)
        w = np.where((idx >> t) & 1, 1.0, -1.0)
        step = 1 + v[p] * w
        # per-prefix expectations under the prefix law, before this bit is drawn
        prefix_law = f.prefix_means(t) / (1 << t)
        abs_v[t] = np.dot(prefix_law, np.abs(v))
        sq_v[t] = np.dot(prefix_law, v * v)
        mean_v[t] = np.dot(prefix_law, v)
        law *= 0.5 * step
        M *= step
        with np.errstate(divide="ignore"):
            logsum += np.log(step)
    return PathTables(law, M, logsum, abs_v, sq_v, mean_v, degenerate)


def endpoint_law(f):
    """Exact law of W as the product of the sampler's step probabilities."""
    return path_tables(f).law


def change_of_measure_mean(f):
    """E[1 / M_n] under the sampler's law; equals mu({f > 0}), so 1 for positive f."""
    pt = path_tables(f)
    ok = pt.law > 0
    return float(np.sum(pt.law[ok] / pt.M[ok]))


def entropy_mu(f):
    """H_mu(f) = int f log f dmu, with 0 log 0 = 0."""
    return float(np.mean(xlogy(f.values, f.values)))


def entropy_chain(f):
    """sum_t E[log(1 + v_{t-1} w_t)], which equals H_mu(f)."""
    pt = path_tables(f)
    ok = pt.law > 0
    return float(np.dot(pt.law[ok], pt.log_increments[ok]))


def modified_lsi_gap(f, return_zeros=False):
    """sum_i int (d_i f)^2 / f dmu - H_mu(f)."""
    total = 0.0
    zeros = 0
    fv = f.values
    for i in range(1, f.n + 1):
        d = discrete_derivative(f, i)
        z = fv == 0
        if np.any(z & (d != 0)):
            raise DegenerateDensityError(f"division by zero: f = 0 where d_{i} f != 0")
        zeros += int(np.count_nonzero(z))
        total += np.sum(np.where(z, 0.0, d * d / np.where(z, 1.0, fv))) / f.size
    gap = total - entropy_mu(f)
    return (gap, zeros) if return_zeros else gap


def lsi_gap(f, constant=2.0):
    """constant * sum_i int (d_i sqrt f)^2 dmu - H_mu(f)."""
    root = np.sqrt(f.values)
    dirichlet = sum(np.mean(_derivative(root, i) ** 2) for i in range(1, f.n + 1))
    return float(constant * dirichlet - entropy_mu(f))


def sqrt_inequality_slack(a, b):
    """2 (sqrt a - sqrt b)^2 (a + b) - (a - b)^2, nonnegative for a, b >= 0."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return 2 * (np.sqrt(a) - np.sqrt(b)) ** 2 * (a + b) - (a - b) ** 2


@dataclass
class MartingaleTables:
    """v[i-1][t] and vhat[i-1][t] are arrays over prefixes of length t."""

    v: list
    vhat: list
    residual: float
    residual_hat: float
    second_moments: np.ndarray
    diagonal_gap: float = field(default=0.0)

    @property
    def l2_monotone(self):
        return bool(np.all(np.diff(self.second_moments, axis=1) >= -1e-12))


def _ratio(num, den):
    ok = den > 0
    return np.where(ok, num / np.where(ok, den, 1.0), 0.0)


def _martingale_residual(values, den_table, t):
    """max |E[values_{t+1} | prefix] - values_t| with the next bit drawn from den_table's law."""
    cur, nxt = prefix_means(den_table, t), prefix_means(den_table, t + 1)
    lo, hi = nxt[: 1 << t], nxt[1 << t :]
    cond = _ratio(0.5 * (lo * values[t + 1][: 1 << t] + hi * values[t + 1][1 << t :]), cur)
    return float(np.max(np.where(cur > 0, np.abs(cond - values[t]), 0.0), initial=0.0))


def martingale_tables(f):
    """Exact v_t^i and vhat_t^i over all prefixes, with martingale residuals.

    The numerator of vhat uses d_i f, which does not depend on x_i; f_i
    replaces f in the denominator and drives the law of the prefix.
    """
    n = f.n
    means = [f.prefix_means(t) for t in range(n + 1)]
    v_all, vh_all = [], []
    resid = resid_hat = diag = 0.0
    moments = np.zeros((n, n + 1))
    for i in range(1, n + 1):
        d = discrete_derivative(f, i)
        fi = coordinate_average(f, i)
        nums = [prefix_means(d, t) for t in range(n + 1)]
        vs = [_ratio(nums[t], means[t]) for t in range(n + 1)]
        vhs = [_ratio(nums[t], prefix_means(fi, t)) for t in range(n + 1)]
        for t in range(n + 1):
            moments[i - 1, t] = np.dot(means[t] / (1 << t), vs[t] ** 2)
        for t in range(n):
            resid = max(resid, _martingale_residual(vs, f.values, t))
            resid_hat = max(resid_hat, _martingale_residual(vhs, fi, t))
        diag = max(diag, float(np.max(np.abs(vhs[i - 1] - drift_table(f, i - 1)[0]))))
        v_all.append(vs)
        vh_all.append(vhs)
    return MartingaleTables(v_all, vh_all, resid, resid_hat, moments, diag)


def noise_operator(f, t):
    """T_t f(x) = E f(x y) with y_i = +1 with probability (1 + e^{-t}) / 2."""
    if t < 0:
        raise ValueError("noise time must be nonnegative")
    rho = math.exp(-t)
    g = f.values.copy()
    for i in range(f.n):
        v = g.reshape(-1, 2, 1 << i)
        lo, hi = v[:, 0, :].copy(), v[:, 1, :].copy()
        v[:, 0, :] = 0.5 * (1 + rho) * lo + 0.5 * (1 - rho) * hi
        v[:, 1, :] = 0.5 * (1 + rho) * hi + 0.5 * (1 - rho) * lo
    return CubeFunction(f.n, g)


def cube_tail_scan(f, t, alphas):
    """mu({T_t f > alpha}) by enumeration."""
    alphas = np.asarray(alphas, float)
    g = noise_operator(f, t).values
    tails = np.array([np.mean(g > a) for a in alphas])
    nan = np.full_like(alphas, np.nan)
    return TailScan(alphas, tails, alphas * tails, nan, tails, tails, "exact")


def perturbed_sample(f, delta, seed, index=0):
    """(W, X^delta): coordinate t of X^delta is sign(v_{t-1}) with probability delta |v_{t-1}|, else w_t."""
    if not 0 <= delta <= 1:
        raise ValueError("delta must lie in [0, 1]")
    tr = exact_sample(f, seed, index)
    u = rng.stream(seed, (1 << 32) + index).random(f.n)
    x = np.where(u < delta * np.abs(tr.drift), np.sign(tr.drift), tr.bits)
    return tr.bits, x


def perturbation_moments(f, delta):
    """Exact moments of X^delta - W next to the two displayed expressions.

    Returns dict with mean_sq (||E[X - W]||^2), second (E||X - W||^2) and
    the reference values 4 delta^2 sum E v^2 and 4 delta sum E|v|.
    """
    n = f.n
    mean_diff = np.zeros(n)
    second = 0.0
    for t in range(n):
        v, _ = drift_table(f, t)
        law = f.prefix_means(t) / (1 << t)
        s = np.sign(v)
        # given the prefix: flip to sign(v) w.p. delta |v|; the difference is 2 sign(v) when w = -sign(v)
        p_opp = 0.5 * (1 - np.abs(v))
        mean_diff[t] = np.dot(law, delta * np.abs(v) * 2 * s * p_opp)
        second += np.dot(law, delta * np.abs(v) * 4 * p_opp)
    pt = path_tables(f)
    return dict(
        delta=delta,
        mean_sq=float(np.sum(mean_diff**2)),
        mean_sq_reference=float(4 * delta**2 * pt.sq_drift.sum()),
        second=float(second),
        second_reference=float(4 * delta * pt.abs_drift.sum()),
    )


def total_variation(p, q):
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))

"""Tail probabilities, level masses, the doubling experiment and bound arithmetic.

Exact mode works on the line: superlevel sets {f > a} are found by root
finding and measured with Gaussian cdf differences.  Monte Carlo mode samples
gamma_n from a counter-based stream and reports Wilson intervals.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import rng
from .density import (
    GaussianMixture,
    as_points,
    estimate_beta,
    gauss_mass,
    interval_mass,
    log_ou,
    superlevel_intervals,
)
from .errors import InsufficientSamplesError, UnsupportedDimensionError
from .stats import wilson_interval

E2 = math.e**2
MIN_MC_SAMPLES = 100_000


def bound_shape(alpha, beta=1.0, log_alpha=None):
    """beta (log log alpha)^4 / sqrt(log alpha)."""
    la = math.log(alpha) if log_alpha is None else log_alpha
    return beta * math.log(la) ** 4 / math.sqrt(la)


@dataclass
class TailScan:
    alphas: np.ndarray
    tails: np.ndarray
    markov_ratio: np.ndarray
    bound_shape: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mode: str
    beta: float = 1.0

    @property
    def shape_ratio(self):
        """markov_ratio / bound_shape, the empirical stand-in for the constant C."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.bound_shape > 0, self.markov_ratio / self.bound_shape, np.nan)

    def rows(self):
        return [
            dict(alpha=a, tail=t, markov_ratio=r, bound_shape=b, lower=lo, upper=hi)
            for a, t, r, b, lo, hi in zip(
                self.alphas, self.tails, self.markov_ratio, self.bound_shape, self.lower, self.upper
            )
        ]


def _scan(log_fn, dim, alphas, beta, mode, n_samples, seed):
    alphas = np.asarray(alphas, dtype=float)
    if np.any(np.diff(alphas) <= 0):
        raise ValueError("alpha grid must be increasing")
    if mode == "auto":
        mode = "exact" if dim == 1 else "mc"
    if mode == "exact":
        if dim != 1:
            raise UnsupportedDimensionError(f"exact tails need n = 1, got n = {dim}")
        tails = np.array([interval_mass(superlevel_intervals(log_fn, math.log(a))) for a in alphas])
        lower = upper = tails
    elif mode == "mc":
        if n_samples < MIN_MC_SAMPLES:
            raise InsufficientSamplesError(f"Monte Carlo tails need at least {MIN_MC_SAMPLES} samples")
        z = rng.stream(seed, 0).standard_normal((n_samples, dim))
        logs = log_fn(z)
        hits = np.array([np.count_nonzero(logs > math.log(a)) for a in alphas])
        tails = hits / n_samples
        ci = np.array([wilson_interval(h, n_samples) for h in hits])
        lower, upper = ci[:, 0], ci[:, 1]
    else:
        raise ValueError(f"unknown tail mode {mode!r}")
    shape = np.array([bound_shape(a, beta) if a > math.e else np.nan for a in alphas])
    return TailScan(alphas, tails, alphas * tails, shape, np.asarray(lower), np.asarray(upper), mode, beta)


def tail_scan(d, alphas, beta=1.0, mode="auto", n_samples=MIN_MC_SAMPLES, seed=0):
    """gamma_n({f > alpha}) over an increasing alpha grid."""
    return _scan(lambda x: d.log_f(as_points(x, d.dim)), d.dim, alphas, beta, mode, n_samples, seed)


def ou_tail_scan(d, t, alphas, beta=1.0, mode="auto", n_samples=MIN_MC_SAMPLES, seed=0):
    """Tail scan of the smoothed function x -> U_t f(x)."""
    if t < 0:
        raise ValueError("OU time must be nonnegative")
    return _scan(lambda x: log_ou(d, t, x), d.dim, alphas, beta, mode, n_samples, seed)


def heat_content_band(d, t, alpha, mode="auto", n_samples=MIN_MC_SAMPLES, seed=0):
    """int U_t f 1{U_t f in [alpha, 2 alpha]} dgamma_n."""
    if mode == "auto":
        mode = "exact" if d.dim == 1 else "mc"
    if mode == "mc":
        z = rng.stream(seed, 0).standard_normal((n_samples, d.dim))
        L = log_ou(d, t, z)
        inside = (L >= math.log(alpha)) & (L <= math.log(2 * alpha))
        return float(np.mean(np.where(inside, np.exp(L), 0.0)))
    if d.dim != 1:
        raise UnsupportedDimensionError("exact heat content needs n = 1")
    log_fn = lambda x: log_ou(d, t, x)
    dens = lambda x: math.exp(float(log_fn(np.float64(x))) - 0.5 * x * x) / math.sqrt(2 * math.pi)

    def content(intervals):
        return sum(integrate.quad(dens, a, b, limit=200, epsabs=1e-12, epsrel=1e-10)[0] for a, b in intervals)

    lo = content(superlevel_intervals(log_fn, math.log(alpha)))
    hi = content(superlevel_intervals(log_fn, math.log(2 * alpha)))
    return max(0.0, lo - hi)


def interval_difference(A, B):
    """A minus B for sorted lists of disjoint open intervals."""
    out = []
    for a, b in A:
        cur = a
        for c, e in B:
            if e <= cur or c >= b:
                continue
            if c > cur:
                out.append((cur, c))
            cur = max(cur, e)
        if cur < b:
            out.append((cur, b))
    return out


def scale_summation(d, alpha, max_scales=2000):
    """Sum over k of gamma({f in [e^k alpha, e^{k+1} alpha)}), each band measured directly.

    Returns (total, bands).  The bands partition {f >= alpha}, so the total
    telescopes to the full tail.
    """
    if d.dim != 1:
        raise UnsupportedDimensionError("scale summation needs n = 1")
    la = math.log(alpha)
    bands = []
    upper = superlevel_intervals(d.log_f, la)
    for k in range(max_scales):
        if not upper:
            break
        nxt = superlevel_intervals(d.log_f, la + k + 1)
        mass = interval_mass(interval_difference(upper, nxt))
        bands.append(mass)
        if interval_mass(nxt) == 0.0:
            break
        upper = nxt
    return float(math.fsum(bands)), bands


@dataclass
class LevelMass:
    alpha: float
    y_grid: np.ndarray
    q: np.ndarray
    stderr: np.ndarray
    mode: str
    hits: np.ndarray = field(default=None)

    def rows(self):
        return [dict(y=y, q=q, stderr=s) for y, q, s in zip(self.y_grid, self.q, self.stderr)]


def level_mass(records, d, alpha, y_grid, min_hits=30):
    """Empirical q(y) = P(log f(W_1) in [log alpha, log alpha + y]) from simulated paths."""
    y_grid = np.asarray(y_grid, dtype=float)
    w1 = records.w1[records.valid]
    lf = d.log_f(as_points(w1, d.dim))
    la = math.log(alpha)
    ind = (lf[:, None] >= la) & (lf[:, None] <= la + y_grid[None, :])
    hits = ind.sum(axis=0)
    n = ind.shape[0]
    if hits.max(initial=0) < min_hits:
        raise InsufficientSamplesError(
            f"only {int(hits.max(initial=0))} paths in the widest band (need {min_hits})"
        )
    q = hits / n
    return LevelMass(alpha, y_grid, q, np.sqrt(q * (1 - q) / n), "mc", hits)


def level_mass_exact(d, alpha, y_grid):
    """q(y) by integrating f dgamma_1 over {log f in [log alpha, log alpha + y]}."""
    if d.dim != 1:
        raise UnsupportedDimensionError("exact level masses need n = 1")
    y_grid = np.asarray(y_grid, dtype=float)
    la = math.log(alpha)

    def law_mass(intervals):
        return sum(float(d.endpoint_cdf(b) - d.endpoint_cdf(a)) for a, b in intervals)

    base = law_mass(superlevel_intervals(d.log_f, la))
    q = np.array(
        [base - (law_mass(superlevel_intervals(d.log_f, la + y)) if math.isfinite(y) else 0.0) for y in y_grid]
    )
    q = np.maximum.accumulate(np.clip(q, 0.0, 1.0))
    return LevelMass(alpha, y_grid, q, np.zeros_like(q), "exact")


# ---------------------------------------------------------------------------
# expansion lemma arithmetic


def _loglog(la):
    return math.log(la) if la > 0 else -math.inf


def expansion_epsilon(log_alpha):
    """epsilon = 1 / (32 log2 log alpha); infinite when log alpha <= 1."""
    l2 = math.log2(log_alpha) if log_alpha > 0 else -math.inf
    return 1.0 / (32.0 * l2) if l2 > 0 else math.inf


def _growth_term(q, log_alpha, beta):
    # 32 e^2 sqrt(beta log log alpha) / (epsilon q sqrt(log alpha)), with 1/epsilon expanded
    ll = max(0.0, _loglog(log_alpha))
    inv_eps = 32.0 * max(0.0, math.log2(log_alpha)) if log_alpha > 0 else 0.0
    if q <= 0:
        return math.inf
    return 32 * E2 * math.sqrt(beta * ll) * inv_eps / (q * math.sqrt(log_alpha))


def expanded_level(y, q, log_alpha, beta):
    """y' = y (2 + 32 e^2 sqrt(beta log log alpha) / (eps q sqrt(log alpha))) + 5 log log alpha + 3."""
    ll = max(0.0, _loglog(log_alpha))
    return y * (2 + _growth_term(q, log_alpha, beta)) + 5 * ll + 3


def expansion_conditions(y, q, log_alpha, beta):
    eps = expansion_epsilon(log_alpha)
    ll = max(0.0, _loglog(log_alpha))
    cond_i = eps * q >= 32 * E2 * math.sqrt(beta * ll) / math.sqrt(log_alpha) if math.isfinite(eps) else False
    cond_ii = y <= eps * math.sqrt(q * log_alpha) / (3 * math.sqrt(beta)) if math.isfinite(eps) else False
    return dict(alpha_at_least_e3=log_alpha >= 3, condition_i=bool(cond_i), condition_ii=bool(cond_ii))


def lemma_lambda(log_alpha, beta, eps, q):
    """lambda = 4 e^2 sqrt(beta log alpha log log alpha) / (eps q)."""
    return 4 * E2 * math.sqrt(beta * log_alpha * max(0.0, _loglog(log_alpha))) / (eps * q)


def doubling_experiment(records, d, alpha, y, beta):
    """Estimate q(y) and q(y') and compare their ratio with 2 - 12 eps.

    The lemma's hypotheses are reported as regime flags, not enforced.  When
    the density is one-dimensional the exact ratio is included.
    """
    la = math.log(alpha)
    eps = expansion_epsilon(la)
    w1 = records.w1[records.valid]
    lf = d.log_f(as_points(w1, d.dim))
    n = lf.shape[0]
    in_y = (lf >= la) & (lf <= la + y)
    q = in_y.mean()
    report = dict(alpha=alpha, y=y, beta=beta, epsilon=eps, n_paths=int(n), q_y=float(q))
    if q == 0:
        report.update(status="not-applicable", reason="q(y) = 0")
        return report
    y2 = expanded_level(y, q, la, beta)
    in_y2 = (lf >= la) & (lf <= la + y2)
    q2 = in_y2.mean()
    target = 2 - 12 * eps if math.isfinite(eps) else -math.inf
    diff = in_y2.astype(float) - (target if math.isfinite(target) else 0.0) * in_y
    se = diff.std(ddof=1) / math.sqrt(n) if n > 1 else math.inf
    report.update(
        status="ok",
        y_prime=y2,
        q_y_prime=float(q2),
        ratio=float(q2 / q),
        target=target,
        met=bool(diff.mean() + 1.96 * se >= 0) if math.isfinite(target) else True,
        q_y_stderr=float(math.sqrt(q * (1 - q) / n)),
        q_y_prime_stderr=float(math.sqrt(q2 * (1 - q2) / n)),
        hits_y=int(in_y.sum()),
        hits_y_prime=int(in_y2.sum()),
        **expansion_conditions(y, q, la, beta),
    )
    if in_y.sum() < 30:
        report["flag"] = "insufficient-samples"
    if d.dim == 1:
        ex = level_mass_exact(d, alpha, [y])
        q_ex = float(ex.q[0])
        if q_ex > 0:
            y2_ex = expanded_level(y, q_ex, la, beta)
            report.update(
                exact_q_y=q_ex,
                exact_y_prime=y2_ex,
                exact_ratio=float(level_mass_exact(d, alpha, [y2_ex]).q[0] / q_ex),
            )
    return report


def bad_event_frequencies(records, alpha, lambdas=(), gammas=(), beta=1.0, level=0.95):
    """Empirical P(E_lambda) and P(B_gamma) against the two lemma bounds.

    E_lambda = {int_0^T <v_1 - v_t, v_t> dt <= -lambda},
    B_gamma  = {int_0^T <v_t, dB_t> >= gamma sqrt(log alpha)}.
    A row passes when the one-sided lower confidence bound of the
    frequency does not exceed the bound.
    """
    ok = records.valid
    cross = records.cross_to_T[ok]
    stoch = records.stoch_integral_to_T[ok]
    n = cross.shape[0]
    la = math.log(alpha)
    rows = []
    for lam in lambdas:
        hits = int(np.count_nonzero(cross <= -lam))
        lo, hi = wilson_interval(hits, n, level, one_sided=True)
        bound = min(1.0, 4 * E2 * math.sqrt(beta * la * max(0.0, _loglog(la))) / lam) if lam > 0 else 1.0
        rows.append(dict(event="E", param=float(lam), freq=hits / n, lower=lo, upper=hi, bound=bound, passed=lo <= bound))
    for g in gammas:
        hits = int(np.count_nonzero(stoch >= g * math.sqrt(la)))
        lo, hi = wilson_interval(hits, n, level, one_sided=True)
        bound = math.exp(-g * g / 4)
        rows.append(dict(event="B", param=float(g), freq=hits / n, lower=lo, upper=hi, bound=bound, passed=lo <= bound))
    return rows


def theoretical_bound(alpha=None, beta=1.0, q0=None, log_alpha=None):
    """Bound shape and the internal quantities of the doubling argument.

    With ``q0`` the recursion y_{k+1} = y_k (2 + growth(q(y_k))) + y0 is traced
    under the doubling model q(y_k) = 2^{k-1} q0 (q(y_0) = q0), up to
    k = ceil(log2 sqrt(log alpha)), next to the simplified envelope
    y_k (2 + 2^{1-k}) + y0.  ``log_alpha`` allows levels too large for floats.
    """
    la = math.log(alpha) if log_alpha is None else float(log_alpha)
    if la < 3:
        raise ValueError("alpha must be at least e^3")
    if beta < 1:
        raise ValueError("beta must be at least 1")
    ll = math.log(la)
    eps = expansion_epsilon(la)
    y0 = 5 * ll + 3
    report = dict(
        log_alpha=la,
        beta=beta,
        shape=bound_shape(None, beta, log_alpha=la),
        y0=y0,
        epsilon=eps,
        q_assume_threshold=9 * math.e**11 * beta * y0 * y0 / (eps * eps * math.sqrt(la)),
        condition_i_threshold=32 * E2 * math.sqrt(beta * ll) / (eps * math.sqrt(la)),
        k_max=math.ceil(math.log2(math.sqrt(la))),
    )
    if q0 is not None:
        ys, envelope, qs = [y0], [], []
        for k in range(report["k_max"] + 1):
            qk = q0 if k == 0 else 2.0 ** (k - 1) * q0
            qs.append(qk)
            yk = ys[-1]
            ys.append(yk * (2 + _growth_term(qk, la, beta)) + y0)
            envelope.append(yk * (2 + 2.0 ** (1 - k)) + y0)
        report.update(
            q0=q0,
            q0_satisfies_condition_i=q0 >= report["condition_i_threshold"],
            q0_is_probability=q0 <= 1,
            q_trace=qs,
            y_trace=ys,
            envelope=envelope,
            envelope_holds=[y <= e * (1 + 1e-12) for y, e in zip(ys[1:], envelope)],
        )
    return report


def tail_shape_scan(sigmas, alphas):
    """Exact tail scans for the scaled family f = N(0, sigma^2) / gamma_1.

    beta is max(1, 1/sigma^2 - 1), the curvature of -log f.  The reported
    constant is the largest markov_ratio sqrt(log alpha) / (beta (log log alpha)^4).
    """
    out = []
    for s in sigmas:
        d = GaussianMixture.scaled(s)
        beta = max(1.0, estimate_beta(d, [0.0]))
        scan = tail_scan(d, alphas, beta=beta, mode="exact")
        ratio = scan.shape_ratio
        out.append(
            dict(
                sigma=s,
                beta=beta,
                scan=scan,
                strictly_decreasing=bool(np.all(np.diff(scan.markov_ratio) < 0)),
                non_increasing=bool(np.all(np.diff(scan.markov_ratio) <= 0)),
                constant=float(np.nanmax(ratio)) if np.any(np.isfinite(ratio)) else math.nan,
                max_f=1.0 / s,
            )
        )
    return out

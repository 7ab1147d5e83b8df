"""Euler-Maruyama simulation of the Föllmer drift process and its perturbations.

    dW_t = dB_t + v_t dt,    v_t = grad log P_{1-t} f(W_t)

The integrator stops drifting at 1 - eta and finishes with one pure-diffusion
step.  Alongside W it tracks the energy  int |v|^2 dt,  the stochastic integral
int <v, dB>,  the stopping time T (first grid time where the energy reaches
2 log alpha or |int <v, dB>| reaches 4 sqrt(log alpha log log alpha)),  and the
perturbed endpoint  X^delta_1 = W_1 + delta int_0^T v dt  driven by the same
increments.

Path ``i`` draws its increments from ``rng.stream(seed, i)`` and paths are
processed in fixed-size chunks, so results do not depend on the worker count.
"""
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import rng
from .density import LOG_FLOOR, as_points

CHUNK_SIZE = 1024

STOP_NONE, STOP_ENERGY, STOP_INTEGRAL = 0, 1, 2
STOP_REASONS = ("none", "energy-threshold", "integral-threshold")


@dataclass(frozen=True)
class Schedule:
    """Time grid 0 = t_0 < ... < t_K = 1 - eta.

    ``log-dense-terminal`` spends half the steps uniformly on [0, 1/2] and
    the other half on a geometric grid in 1 - t down to eta.
    """

    kind: str = "log-dense-terminal"
    n_steps: int = 512
    eta: float = 1e-4

    def __post_init__(self):
        if self.kind not in ("uniform", "log-dense-terminal"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.n_steps < 2:
            raise ValueError("n_steps must be at least 2")
        if not 0 < self.eta <= 0.01:
            raise ValueError("eta must lie in (0, 0.01]")

    def times(self):
        K, eta = self.n_steps, self.eta
        if self.kind == "uniform":
            return np.linspace(0.0, 1.0 - eta, K + 1)
        k1 = K // 2
        k2 = K - k1
        head = np.linspace(0.0, 0.5, k1 + 1)
        gap = 0.5 * (2 * eta) ** (np.arange(1, k2 + 1) / k2)
        tail = 1.0 - gap
        tail[-1] = 1.0 - eta
        return np.concatenate([head, tail])


def stopping_thresholds(alpha):
    """(energy threshold, |stochastic integral| threshold) for level alpha.

    The integral threshold needs log log alpha > 0; below alpha = e it is
    taken as infinite.
    """
    if alpha is None:
        return math.inf, math.inf
    la = math.log(alpha)
    prod = la * math.log(la) if la > 1 else 0.0
    return 2 * la, (4 * math.sqrt(prod) if prod > 0 else math.inf)


@dataclass(frozen=True)
class PathRecord:
    seed: int
    path_id: int
    w1: np.ndarray
    energy: float
    stoch_integral: float
    stop_time: float
    stop_reason: str
    energy_to_T: float
    stoch_integral_to_T: float
    log_m1: float


@dataclass(frozen=True)
class PerturbedCoupling:
    base: PathRecord
    delta: float
    x1: np.ndarray
    displacement: np.ndarray
    log_girsanov: float
    v1: np.ndarray
    drift_to_T: np.ndarray


@dataclass
class PathBatch:
    """Columnar record of simulated paths (one row per path).

    Besides the PathRecord fields it keeps what the analysis code needs:
    W at 1 - eta, the drift integrals over [0, 1 - eta] and [0, T], the
    terminal gradient v_1 = grad log f(W_1), and optional drift snapshots.
    """

    seed: int
    path_id: np.ndarray
    w1: np.ndarray
    w_pre: np.ndarray
    energy: np.ndarray
    stoch_integral: np.ndarray
    stop_time: np.ndarray
    stop_code: np.ndarray
    energy_to_T: np.ndarray
    stoch_integral_to_T: np.ndarray
    log_m1: np.ndarray
    drift_total: np.ndarray
    drift_to_T: np.ndarray
    v1: np.ndarray
    delta: float
    x1: np.ndarray
    log_girsanov: np.ndarray
    discarded: np.ndarray
    snapshot_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_snap: np.ndarray = None
    alpha: float = None
    eta: float = None

    def __len__(self):
        return self.path_id.shape[0]

    @property
    def dim(self):
        return self.w1.shape[1]

    @property
    def stop_reason(self):
        return np.array(STOP_REASONS, dtype=object)[self.stop_code]

    @property
    def cross_to_T(self):
        """int_0^T <v_1 - v_t, v_t> dt  =  <v_1, int_0^T v dt> - energy_to_T."""
        return np.sum(self.v1 * self.drift_to_T, axis=1) - self.energy_to_T

    @property
    def valid(self):
        return ~self.discarded

    def select(self, mask):
        kw = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, np.ndarray) and val.ndim and val.shape[0] == len(self) and f.name != "snapshot_times":
                val = val[mask]
            kw[f.name] = val
        return PathBatch(**kw)

    def record(self, i):
        return PathRecord(
            seed=self.seed,
            path_id=int(self.path_id[i]),
            w1=self.w1[i].copy(),
            energy=float(self.energy[i]),
            stoch_integral=float(self.stoch_integral[i]),
            stop_time=float(self.stop_time[i]),
            stop_reason=STOP_REASONS[self.stop_code[i]],
            energy_to_T=float(self.energy_to_T[i]),
            stoch_integral_to_T=float(self.stoch_integral_to_T[i]),
            log_m1=float(self.log_m1[i]),
        )

    def coupling(self, i):
        return PerturbedCoupling(
            base=self.record(i),
            delta=self.delta,
            x1=self.x1[i].copy(),
            displacement=self.delta * self.drift_to_T[i],
            log_girsanov=float(self.log_girsanov[i]),
            v1=self.v1[i].copy(),
            drift_to_T=self.drift_to_T[i].copy(),
        )

    @classmethod
    def concat(cls, parts):
        first = parts[0]
        kw = {}
        for f in fields(cls):
            vals = [getattr(p, f.name) for p in parts]
            v0 = vals[0]
            if f.name == "snapshot_times" or not isinstance(v0, np.ndarray):
                kw[f.name] = v0
            else:
                kw[f.name] = np.concatenate(vals, axis=0)
        return cls(**kw)


def _simulate_chunk(job):
    d, times, seed, indices, alpha, delta, drift_scale, snap_idx = job
    n = d.dim
    N = len(indices)
    K = len(times) - 1
    xi = rng.path_noise(seed, indices, K + 1, n)
    dts = np.diff(times)
    thr_e, thr_i = stopping_thresholds(alpha)

    W = np.zeros((N, n))
    energy = np.zeros(N)
    stoch = np.zeros(N)
    drift_total = np.zeros((N, n))
    energy_T = np.zeros(N)
    stoch_T = np.zeros(N)
    drift_T = np.zeros((N, n))
    active = np.ones(N, dtype=bool)
    stop_time = np.full(N, times[-1])
    stop_code = np.zeros(N, dtype=np.int64)
    bad = np.zeros(N, dtype=bool)
    v_snap = np.zeros((N, len(snap_idx), n))
    snap_pos = {k: j for j, k in enumerate(snap_idx)}

    for k in range(K):
        dt = dts[k]
        L, v = d.log_heat_and_grad(1.0 - times[k], W)
        bad |= (L <= LOG_FLOOR) | ~np.all(np.isfinite(v), axis=1)
        v = np.where(bad[:, None], 0.0, v)
        if k in snap_pos:
            v_snap[:, snap_pos[k]] = v
        u = drift_scale * v
        dB = math.sqrt(dt) * xi[:, k]
        e_inc = np.sum(u * u, axis=1) * dt
        s_inc = np.sum(u * dB, axis=1)
        energy += e_inc
        stoch += s_inc
        drift_total += u * dt
        if active.any():
            energy_T += np.where(active, e_inc, 0.0)
            stoch_T += np.where(active, s_inc, 0.0)
            drift_T += np.where(active[:, None], u * dt, 0.0)
            hit_e = active & (energy_T >= thr_e)
            hit_i = active & ~hit_e & (np.abs(stoch_T) >= thr_i)
            stop_code[hit_e] = STOP_ENERGY
            stop_code[hit_i] = STOP_INTEGRAL
            newly = hit_e | hit_i
            stop_time[newly] = times[k + 1]
            active &= ~newly
        W = W + u * dt + dB

    w_pre = W
    w1 = W + math.sqrt(1.0 - times[-1]) * xi[:, K]
    v1 = d.grad_log_heat(0.0, w1)
    x1 = w1 + delta * drift_T
    log_girsanov = -delta * stoch_T - (delta + 0.5 * delta * delta) * energy_T
    return PathBatch(
        seed=seed,
        path_id=np.asarray(indices, dtype=np.int64),
        w1=w1,
        w_pre=w_pre,
        energy=energy,
        stoch_integral=stoch,
        stop_time=stop_time,
        stop_code=stop_code,
        energy_to_T=energy_T,
        stoch_integral_to_T=stoch_T,
        log_m1=stoch + 0.5 * energy,
        drift_total=drift_total,
        drift_to_T=drift_T,
        v1=v1,
        delta=float(delta),
        x1=x1,
        log_girsanov=log_girsanov,
        discarded=bad,
        snapshot_times=np.asarray([times[k] for k in snap_idx]),
        v_snap=v_snap,
        alpha=alpha,
        eta=1.0 - times[-1],
    )


def resolve_workers(workers=None):
    if workers is None:
        env = os.environ.get("DRIFTLAB_WORKERS")
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(workers))


def simulate_paths(
    d,
    schedule,
    seed,
    n_paths,
    *,
    alpha=None,
    delta=0.0,
    drift_scale=1.0,
    snapshot_times=(),
    workers=1,
    first_index=0,
):
    """Simulate ``n_paths`` drifted paths; returns a PathBatch.

    ``alpha`` turns on the stopping time, ``delta`` the coupled X^delta
    endpoint, ``drift_scale`` multiplies the re-evaluated drift (the Y^delta
    process uses 1 + delta).
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    times = schedule.times()
    snap_idx = [int(np.searchsorted(times, s - 1e-12)) for s in snapshot_times]
    if any(k >= len(times) - 1 for k in snap_idx):
        raise ValueError("snapshot times must precede 1 - eta")
    idx = np.arange(first_index, first_index + n_paths)
    jobs = [
        (d, times, int(seed), idx[i : i + CHUNK_SIZE], alpha, float(delta), float(drift_scale), snap_idx)
        for i in range(0, n_paths, CHUNK_SIZE)
    ]
    workers = resolve_workers(workers)
    if workers == 1 or len(jobs) == 1:
        parts = [_simulate_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_chunk, jobs))
    return PathBatch.concat(parts)


def simulate_path(d, schedule, seed, index=0, alpha=None):
    return simulate_paths(d, schedule, seed, 1, alpha=alpha, first_index=index).record(0)


def simulate_coupled(d, schedule, seed, delta, alpha, index=0):
    """One (W, X^delta) pair; X^delta drifts along the W-path drift until T."""
    if alpha < math.exp(3):
        raise ValueError("alpha must be at least e^3")
    batch = simulate_paths(d, schedule, seed, 1, alpha=alpha, delta=delta, first_index=index)
    return batch.coupling(0)


def simulate_y_delta(d, schedule, seed, delta, index=0):
    """Path of dY = dB + (1 + delta) grad log P_{1-t} f(Y) dt, drift re-evaluated on Y."""
    return simulate_paths(d, schedule, seed, 1, drift_scale=1.0 + delta, first_index=index).record(0)


def default_delta(alpha, beta, log_alpha=None):
    """delta = 1 / (4 sqrt(beta log alpha log log alpha))."""
    la = math.log(alpha) if log_alpha is None else float(log_alpha)
    if la < 3:
        raise ValueError("alpha must be at least e^3")
    if beta < 1:
        raise ValueError("beta must be at least 1")
    return 1.0 / (4.0 * math.sqrt(beta * la * math.log(la)))


def girsanov_weights(d, batch):
    """f(X_1) dQ_delta/dP per path, i.e. f(X_1) / f(W_1) * exp(log_girsanov); mean 1 under P."""
    lf_x = d.log_f(as_points(batch.x1, d.dim))
    lf_w = d.log_f(as_points(batch.w1, d.dim))
    return np.exp(lf_x - lf_w + batch.log_girsanov)


def gradient_lower_bound_check(d, coupling, beta):
    """log f(X_1) - [log f(W_1) + delta <v_1, D> - beta delta^2 |D|^2],  D = int_0^T v dt.

    Accepts a PerturbedCoupling or a PathBatch (vectorized).  Nonnegative
    whenever grad^2 log f >= -beta everywhere.
    """
    if isinstance(coupling, PathBatch):
        w1, x1, v1, D, delta = coupling.w1, coupling.x1, coupling.v1, coupling.drift_to_T, coupling.delta
    else:
        w1, x1, v1, D, delta = (
            coupling.base.w1[None],
            coupling.x1[None],
            coupling.v1[None],
            coupling.drift_to_T[None],
            coupling.delta,
        )
    if delta == 0:
        res = np.zeros(w1.shape[0])
    else:
        lf_x = d.log_f(as_points(x1, d.dim))
        lf_w = d.log_f(as_points(w1, d.dim))
        res = lf_x - (lf_w + delta * np.sum(v1 * D, axis=1) - beta * delta**2 * np.sum(D * D, axis=1))
    return res if isinstance(coupling, PathBatch) else float(res[0])

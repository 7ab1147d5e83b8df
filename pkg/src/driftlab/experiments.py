"""Operation implementations and the artifact writer used by the CLI.

Each op takes the run context and its validated parameters and returns an
OpResult: a headline estimate with standard error, a pass flag for the
invariant it checks, free-form details and plot-ready rows.
"""
import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cube as cb
from . import tails as tl
from .density import (
    as_points,
    entropy,
    fisher_information,
    hessian_log_heat,
    tail_probability_exact,
)
from .follmer import STOP_REASONS, PathBatch, default_delta, girsanov_weights, gradient_lower_bound_check, simulate_paths
from .stats import ks_statistic, mean_and_stderr

GAP_TOL = 1e-10


@dataclass
class OpResult:
    op: str
    estimate: float
    stderr: float = math.nan
    passed: bool = True
    interval: tuple = None
    details: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    def summary(self):
        return dict(
            op=self.op,
            estimate=self.estimate,
            stderr=self.stderr,
            interval=list(self.interval) if self.interval is not None else None,
            details=self.details,
            **{"pass": bool(self.passed)},
        )


class Context:
    """Shared state for one run: config, cached path batches, worker count."""

    def __init__(self, cfg, workers):
        self.cfg = cfg
        self.d = cfg.density
        self.workers = workers
        self._batches = {}
        self.base_batch = None

    def simulate(self, n_paths, alpha=None, delta=0.0):
        key = (n_paths, alpha, delta)
        if key not in self._batches:
            self._batches[key] = simulate_paths(
                self.d, self.cfg.schedule, self.cfg.seed, n_paths, alpha=alpha, delta=delta, workers=self.workers
            )
        return self._batches[key]

    def base(self):
        if self.base_batch is None:
            if self.cfg.paths <= 0:
                raise ValueError("this operation needs run.paths > 0")
            self.base_batch = self.simulate(self.cfg.paths, self.cfg.alpha, self.cfg.delta)
        return self.base_batch


# ---------------------------------------------------------------------------
# density and simulation checks


def op_energy_entropy(ctx, p):
    b = ctx.base()
    half = 0.5 * b.energy[b.valid]
    est, se = mean_and_stderr(half)
    H = entropy(ctx.d)
    err = abs(est - H) / H if H > 0 else abs(est - H)
    return OpResult("energy_entropy", est, se, err <= p["tol"], details=dict(entropy=H, rel_error=err, tol=p["tol"],
                    discarded=int(b.discarded.sum())))


def op_endpoint_ks(ctx, p):
    b = ctx.base()
    ks = ks_statistic(b.w1[b.valid, 0], ctx.d.endpoint_cdf)
    return OpResult("endpoint_ks", ks, math.nan, ks <= p["tol"], details=dict(n=int(b.valid.sum()), tol=p["tol"]))


def op_covariance_identity(ctx, p):
    b = ctx.base()
    ok = b.valid
    cross = np.sum(b.v1[ok] * b.drift_total[ok], axis=1)
    lhs, se = mean_and_stderr(cross)
    rhs, se_r = mean_and_stderr(b.energy[ok])
    err = abs(lhs - rhs) / abs(rhs) if rhs else abs(lhs)
    return OpResult(
        "covariance_identity", lhs, se, err <= p["tol"],
        details=dict(energy=rhs, energy_stderr=se_r, two_entropy=2 * entropy(ctx.d), rel_error=err, tol=p["tol"]),
    )


def _hessian_points(d, lo, hi, step):
    s = np.arange(lo, hi + step / 2, step)
    if d.dim == 1:
        return s[:, None]
    axis = np.zeros((s.size, d.dim))
    axis[:, 0] = s
    diag = np.outer(s, np.ones(d.dim)) / math.sqrt(d.dim)
    return np.vstack([axis, diag])


def op_hessian_lemma(ctx, p):
    pts = _hessian_points(ctx.d, p["lo"], p["hi"], p["step"])
    rows = []
    worst = math.inf
    for t in p["times"]:
        H = np.asarray(hessian_log_heat(ctx.d, t, pts)).reshape(len(pts), ctx.d.dim, ctx.d.dim)
        m = float(np.min(np.linalg.eigvalsh(H)))
        rows.append(dict(t=t, min_eigenvalue=m, bound=-1.0 / t, excess=m + 1.0 / t))
        worst = min(worst, m + 1.0 / t)
    return OpResult("hessian_lemma", worst, math.nan, worst >= -p["tol"], details=dict(tol=p["tol"]), rows=rows)


def op_fisher_monotone(ctx, p):
    vals = [fisher_information(ctx.d, t) for t in p["times"]]
    rows = [dict(t=t, fisher=v) for t, v in zip(p["times"], vals)]
    drop = min(np.diff(vals), default=0.0)
    return OpResult("fisher_monotone", vals[-1], math.nan, drop >= -p["tol"], details=dict(min_increment=drop), rows=rows)


def _coupled(ctx, p):
    delta = p["delta"] if p["delta"] is not None else default_delta(p["alpha"], max(1.0, p["beta"]))
    n = int(p["paths"] or ctx.cfg.paths)
    if n <= 0:
        raise ValueError("coupled operations need paths > 0")
    return ctx.simulate(n, p["alpha"], delta), delta


def op_girsanov(ctx, p):
    b, delta = _coupled(ctx, p)
    ok = b.valid
    est, se = mean_and_stderr(girsanov_weights(ctx.d, b.select(ok)))
    return OpResult(
        "girsanov", est, se, abs(est - 1) <= p["tol"], (est - 1.96 * se, est + 1.96 * se),
        details=dict(delta=delta, alpha=p["alpha"], n=int(ok.sum()), tol=p["tol"]),
    )


def op_gradient_bound(ctx, p):
    b, delta = _coupled(ctx, p)
    res = gradient_lower_bound_check(ctx.d, b.select(b.valid), p["beta"])
    worst = float(res.min())
    q = np.quantile(res, [0.0, 0.01, 0.5])
    return OpResult(
        "gradient_bound", worst, math.nan, worst >= -p["tol"],
        details=dict(delta=delta, beta=p["beta"], allowance=p["tol"], frac_negative=float(np.mean(res < 0)),
                     q0=q[0], q01=q[1], median=q[2]),
    )


def op_bad_events(ctx, p):
    b, _ = _coupled(ctx, p)
    la = math.log(p["alpha"])
    lambdas = list(p["lambdas"])
    info = {}
    if p["lemma_lambda"]:
        y = p["y"] if p["y"] is not None else 5 * math.log(la) + 3
        q, source = p["q"], "config"
        if q is None:
            lf = ctx.d.log_f(as_points(b.w1[b.valid], ctx.d.dim))
            q, source = float(np.mean((lf >= la) & (lf <= la + y))), "empirical"
            if q == 0 and ctx.d.dim == 1:
                q, source = float(tl.level_mass_exact(ctx.d, p["alpha"], [y]).q[0]), "exact"
        eps = tl.expansion_epsilon(la)
        info.update(y=y, q=q, q_source=source, epsilon=eps)
        if q > 0 and math.isfinite(eps):
            lam = tl.lemma_lambda(la, p["beta"], eps, q)
            info["lemma_lambda"] = lam
            lambdas.append(lam)
    rows = tl.bad_event_frequencies(b, p["alpha"], lambdas, p["gammas"], p["beta"])
    worst = max((r["freq"] - r["bound"] for r in rows), default=0.0)
    return OpResult("bad_events", worst, math.nan, all(r["passed"] for r in rows), details=info, rows=rows)


# ---------------------------------------------------------------------------
# tails


def _grid(p):
    return p["alphas"] if p["alphas"] is not None else [math.exp(a) for a in p["log_alphas"]]


def _scan_result(name, scan, extra=None):
    tails = scan.tails
    ok = bool(np.all(np.diff(tails) <= 0) and np.all(scan.markov_ratio <= 1 + 1e-12) and np.all(tails >= 0))
    ratio = scan.shape_ratio
    const = float(np.nanmax(ratio)) if np.any(np.isfinite(ratio)) else math.nan
    details = dict(mode=scan.mode, constant=const, strictly_decreasing=bool(np.all(np.diff(scan.markov_ratio) < 0)))
    details.update(extra or {})
    return OpResult(name, const, math.nan, ok, details=details, rows=scan.rows())


def op_tail_scan(ctx, p):
    scan = tl.tail_scan(ctx.d, _grid(p), p["beta"], p["mode"], int(p["samples"]), ctx.cfg.seed)
    return _scan_result("tail_scan", scan)


def op_ou_tail_scan(ctx, p):
    scan = tl.ou_tail_scan(ctx.d, p["t"], _grid(p), p["beta"], p["mode"], int(p["samples"]), ctx.cfg.seed)
    return _scan_result("ou_tail_scan", scan, dict(t=p["t"]))


def op_heat_content_band(ctx, p):
    v = tl.heat_content_band(ctx.d, p["t"], p["alpha"], p["mode"], seed=ctx.cfg.seed)
    return OpResult("heat_content_band", v, math.nan, 0 <= v <= 1 + 1e-12, details=dict(t=p["t"], alpha=p["alpha"], norm=1.0))


def op_level_mass(ctx, p):
    rows, ok, details = [], True, {}
    mc = tl.level_mass(ctx.base(), ctx.d, p["alpha"], p["y_grid"]) if p["mode"] in ("mc", "both") else None
    ex = tl.level_mass_exact(ctx.d, p["alpha"], p["y_grid"]) if p["mode"] in ("exact", "both") else None
    main = mc if mc is not None else ex
    ok &= bool(np.all(np.diff(main.q) >= 0))
    for k, y in enumerate(main.y_grid):
        row = dict(y=y, q=main.q[k], stderr=main.stderr[k])
        if mc is not None and ex is not None:
            row["q_exact"] = ex.q[k]
            row["within"] = abs(mc.q[k] - ex.q[k]) <= p["nse"] * mc.stderr[k] + 1e-12
            ok &= row["within"]
        rows.append(row)
    return OpResult("level_mass", float(main.q[-1]), float(main.stderr[-1]), ok, details=details, rows=rows)


def op_doubling(ctx, p):
    rep = tl.doubling_experiment(ctx.base(), ctx.d, p["alpha"], p["y"], p["beta"])
    if rep["status"] != "ok":
        return OpResult("doubling", math.nan, math.nan, True, details=rep)
    in_regime = rep["alpha_at_least_e3"] and rep["condition_i"] and rep["condition_ii"]
    se = rep["ratio"] * math.hypot(rep["q_y_stderr"] / rep["q_y"], rep["q_y_prime_stderr"] / max(rep["q_y_prime"], 1e-300))
    return OpResult("doubling", rep["ratio"], se, rep["met"] or not in_regime, details=rep)


def op_tail_shape(ctx, p):
    out = tl.tail_shape_scan(p["sigmas"], [math.exp(a) for a in p["log_alphas"]])
    rows, ok, consts = [], True, []
    for r in out:
        for row in r["scan"].rows():
            rows.append(dict(sigma=r["sigma"], beta=r["beta"], **row))
        mono = r["strictly_decreasing"] if p["strict"] else r["non_increasing"]
        ok &= mono and math.isfinite(r["constant"])
        consts.append(r["constant"])
    details = {f"sigma={r['sigma']}": dict(beta=r["beta"], constant=r["constant"], max_f=r["max_f"],
                                           strictly_decreasing=r["strictly_decreasing"],
                                           non_increasing=r["non_increasing"]) for r in out}
    return OpResult("tail_shape", float(max(consts)), math.nan, ok, details=details, rows=rows)


def op_scale_summation(ctx, p):
    total, bands = tl.scale_summation(ctx.d, p["alpha"])
    tail = tail_probability_exact(ctx.d, p["alpha"])
    rows = [dict(k=k, band=b) for k, b in enumerate(bands)]
    return OpResult("scale_summation", total, math.nan, abs(total - tail) <= p["tol"],
                    details=dict(tail=tail, difference=total - tail), rows=rows)


def op_bound(ctx, p):
    rep = tl.theoretical_bound(p["alpha"], p["beta"], p["q0"], p["log_alpha"])
    ok = True
    rows = []
    if "y_trace" in rep:
        if rep["q0_satisfies_condition_i"]:
            ok = all(rep["envelope_holds"])
        rows = [dict(k=k, q=q, y=y, envelope=e) for k, (q, y, e) in
                enumerate(zip(rep["q_trace"], rep["y_trace"][1:], rep["envelope"]))]
    return OpResult("bound", rep["shape"], math.nan, ok, details=rep, rows=rows)


# ---------------------------------------------------------------------------
# cube


def _cube_family(ctx, p, default_n=8):
    if p.get("count", 1) == 1 and ctx.cfg.cube is not None and p.get("n") is None:
        return [ctx.cfg.cube]
    n = p.get("n") or default_n
    seed = p.get("seed")
    seed = ctx.cfg.seed if seed is None else seed
    return [cb.CubeFunction.random_positive(n, seed + j) for j in range(int(p.get("count", 1)))]


def op_cube_lsi(ctx, p):
    rows = []
    for j, f in enumerate(_cube_family(ctx, p)):
        rows.append(dict(j=j, entropy=cb.entropy_mu(f), modified_gap=cb.modified_lsi_gap(f), lsi_gap=cb.lsi_gap(f),
                         lsi_gap_constant4=cb.lsi_gap(f, 4.0)))
    worst = min(min(r["modified_gap"], r["lsi_gap"]) for r in rows)
    return OpResult("cube_lsi", worst, math.nan, worst >= -p["tol"], rows=rows)


def op_cube_exactness(ctx, p):
    tol = p["tol"]
    rows = []
    worst = dict(disc_com=0.0, chain=0.0, change_of_measure=0.0, law=0.0, gap=math.inf)
    for j in range(int(p["count"])):
        f = cb.CubeFunction.random_positive(p["n"], p["seed"] + j)
        tr = cb.exact_sample(f, p["seed"], j)
        prefix = 0
        err = abs(tr.M[0] - 1.0)
        for t in range(f.n):
            if tr.bits[t] > 0:
                prefix |= 1 << t
            err = max(err, abs(tr.M[t + 1] - f.prefix_means(t + 1)[prefix]))
        chain = abs(cb.entropy_chain(f) - cb.entropy_mu(f))
        com = abs(cb.change_of_measure_mean(f) - float(np.mean(f.values > 0)))
        gap = min(cb.modified_lsi_gap(f), cb.lsi_gap(f))
        g = cb.CubeFunction.random_positive(p["law_n"], p["seed"] + j)
        law = float(np.max(np.abs(cb.endpoint_law(g) - g.values / g.size)))
        rows.append(dict(j=j, disc_com=err, chain=chain, change_of_measure=com, law=law, min_gap=gap))
        for k, v in (("disc_com", err), ("chain", chain), ("change_of_measure", com), ("law", law)):
            worst[k] = max(worst[k], v)
        worst["gap"] = min(worst["gap"], gap)
    ok = all(worst[k] <= tol for k in ("disc_com", "chain", "change_of_measure", "law")) and worst["gap"] >= -GAP_TOL
    est = max(worst[k] for k in ("disc_com", "chain", "change_of_measure", "law"))
    return OpResult("cube_exactness", est, math.nan, ok, details=dict(worst=worst, tol=tol), rows=rows)


def op_cube_sampler_tv(ctx, p):
    f = cb.CubeFunction.random_positive(p["n"], p["seed"])
    idx = cb.sample_many(f, int(p["samples"]), p["seed"])
    emp = np.bincount(idx, minlength=f.size) / idx.size
    tv = cb.total_variation(emp, f.values / f.size)
    rows = [dict(index=i, empirical=e, exact=v / f.size) for i, (e, v) in enumerate(zip(emp, f.values))]
    return OpResult("cube_sampler_tv", tv, math.nan, tv <= p["tol"], details=dict(samples=int(p["samples"])), rows=rows)


def op_cube_martingale(ctx, p):
    mt = cb.martingale_tables(ctx.cfg.cube)
    worst = max(mt.residual, mt.residual_hat, mt.diagonal_gap)
    rows = [dict(i=i + 1, t=t, second_moment=m) for i in range(mt.second_moments.shape[0])
            for t, m in enumerate(mt.second_moments[i])]
    return OpResult("cube_martingale", worst, math.nan, worst <= p["tol"] and mt.l2_monotone,
                    details=dict(residual=mt.residual, residual_hat=mt.residual_hat, diagonal_gap=mt.diagonal_gap,
                                 l2_monotone=mt.l2_monotone), rows=rows)


def op_cube_tail_scan(ctx, p):
    scan = cb.cube_tail_scan(ctx.cfg.cube, p["t"], p["alphas"])
    ok = bool(np.all(np.diff(scan.tails) <= 0))
    rows = [dict(alpha=a, tail=t, markov_ratio=r) for a, t, r in zip(scan.alphas, scan.tails, scan.markov_ratio)]
    return OpResult("cube_tail_scan", float(np.max(scan.markov_ratio)), math.nan, ok, details=dict(t=p["t"]), rows=rows)


def op_cube_perturbation(ctx, p):
    m = cb.perturbation_moments(ctx.cfg.cube, p["delta"])
    return OpResult("cube_perturbation", m["second"], math.nan, True, details=m)


def op_sqrt_inequality(ctx, p):
    g = np.linspace(p["hi"] / p["grid"], p["hi"], int(p["grid"]))
    slack = cb.sqrt_inequality_slack(g[:, None], g[None, :])
    worst = float(slack.min())
    return OpResult("sqrt_inequality", worst, math.nan, worst >= -p["tol"], details=dict(grid=int(p["grid"])))


OP_FUNCS = {name[3:]: fn for name, fn in globals().items() if name.startswith("op_")}


# ---------------------------------------------------------------------------
# artifacts

PATH_COLUMNS = ("energy", "stoch_integral", "stop_time", "stop_reason", "energy_to_T", "stoch_integral_to_T",
                "log_m1", "delta", "log_girsanov")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v) + 0.0, ".17g")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_paths_csv(batch, path):
    """paths.csv with the documented columns first, then the extra analysis columns."""
    n = batch.dim
    vec = lambda name: [f"{name}_{j + 1}" for j in range(n)]
    header = ["path_id", "seed", *vec("w1"), *PATH_COLUMNS, *vec("x1"),
              *vec("v1"), *vec("drift_total"), *vec("drift_to_T"), *vec("w_pre"), "discarded"]
    reasons = batch.stop_reason
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(batch)):
            vals = [batch.path_id[i], batch.seed, *batch.w1[i], batch.energy[i], batch.stoch_integral[i],
                    batch.stop_time[i], reasons[i], batch.energy_to_T[i], batch.stoch_integral_to_T[i],
                    batch.log_m1[i], float(batch.delta), batch.log_girsanov[i], *batch.x1[i], *batch.v1[i],
                    *batch.drift_total[i], *batch.drift_to_T[i], *batch.w_pre[i], bool(batch.discarded[i])]
            fh.write(",".join(_fmt(v) for v in vals) + "\n")


def read_paths_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no paths")
    n = sum(1 for k in rows[0] if k.startswith("w1_"))
    col = lambda k, typ=float: np.array([typ(r[k]) for r in rows])
    vec = lambda name: np.column_stack([col(f"{name}_{j + 1}") for j in range(n)])
    codes = {r: i for i, r in enumerate(STOP_REASONS)}
    return PathBatch(
        seed=int(rows[0]["seed"]), path_id=col("path_id", int), w1=vec("w1"), w_pre=vec("w_pre"),
        energy=col("energy"), stoch_integral=col("stoch_integral"), stop_time=col("stop_time"),
        stop_code=np.array([codes[r["stop_reason"]] for r in rows]), energy_to_T=col("energy_to_T"),
        stoch_integral_to_T=col("stoch_integral_to_T"), log_m1=col("log_m1"), drift_total=vec("drift_total"),
        drift_to_T=vec("drift_to_T"), v1=vec("v1"), delta=float(rows[0]["delta"]), x1=vec("x1"),
        log_girsanov=col("log_girsanov"), discarded=np.array([r["discarded"] == "true" for r in rows]),
    )


def write_rows(rows, path, fmt="csv"):
    if fmt == "json":
        Path(path).write_text(json.dumps(rows, indent=2, default=_json_default) + "\n")
        return
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[k]) if k in r else "" for k in cols) + "\n")


def _json_default(o):
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats so summary.json stays strict JSON."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return None if math.isnan(o) else ("inf" if o > 0 else "-inf")
    return o


def _scalar_row(res):
    lo, hi = res.interval if res.interval is not None else (math.nan, math.nan)
    return {"op": res.op, "value": res.estimate, "stderr": res.stderr, "lower": lo, "upper": hi, "pass": res.passed}


def run_ops(cfg, workers, select=None, fmt="csv", write_paths=True, batch=None):
    """Execute the config's ops (optionally filtered by ``select``); write artifacts; return the summary dict."""
    t0 = time.perf_counter()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, workers)
    ctx.base_batch = batch
    results = []
    if write_paths and cfg.paths > 0:
        write_paths_csv(ctx.base(), out / "paths.csv")
    seen = {}
    for spec in cfg.ops:
        if select is not None and not select(spec.name):
            continue
        params = dict(spec.params)
        if cfg.verify_tol is not None and "tol" in params:
            params["tol"] = cfg.verify_tol
        res = OP_FUNCS[spec.name](ctx, params)
        results.append(res)
        k = seen[spec.name] = seen.get(spec.name, 0) + 1
        stem = f"result_{spec.name}" + (f"_{k}" if k > 1 else "")
        write_rows(res.rows or [_scalar_row(res)], out / f"{stem}.{fmt}", fmt)
    summary = dict(
        config=str(cfg.path),
        config_hash=cfg.hash,
        seed=cfg.seed,
        workers=workers,
        paths=cfg.paths,
        ops=[r.summary() for r in results],
        wall_time=time.perf_counter() - t0,
    )
    summary["pass"] = all(r.passed for r in results)
    (out / "summary.json").write_text(json.dumps(_clean(summary), indent=2, default=_json_default) + "\n")
    return summary

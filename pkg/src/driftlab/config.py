"""TOML experiment configs: parsing and up-front validation.

Every field is checked before any computation starts.  Errors name the
offending field and, when it can be located, its line in the file.
"""
import hashlib
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .cube import MAX_N, CubeFunction
from .density import GaussianMixture, GridDensity1D, SmoothedIndicator1D
from .errors import ConfigError, UnsupportedDimensionError
from .follmer import Schedule

REQUIRED = object()

# op name -> (needs, {param: default}); needs is "paths", "coupled", "cube" or None
OPS = {
    "energy_entropy": ("paths", dict(tol=0.03)),
    "endpoint_ks": ("paths", dict(tol=0.015)),
    "covariance_identity": ("paths", dict(tol=0.05)),
    "hessian_lemma": (None, dict(times=[0.1, 0.3, 0.5, 0.9], lo=-6.0, hi=6.0, step=0.05, tol=1e-3)),
    "fisher_monotone": (None, dict(times=[0.0, 0.25, 0.5, 0.75, 1.0], tol=1e-9)),
    "girsanov": ("coupled", dict(alpha=REQUIRED, beta=1.0, delta=None, paths=None, tol=0.05)),
    "gradient_bound": ("coupled", dict(alpha=REQUIRED, beta=REQUIRED, delta=None, paths=None, tol=1e-3)),
    "bad_events": (
        "coupled",
        dict(alpha=REQUIRED, beta=1.0, gammas=[2.0, 3.0, 4.0], lambdas=[], lemma_lambda=True, y=None, q=None,
             delta=0.0, paths=None),
    ),
    "tail_scan": (None, dict(alphas=None, log_alphas=None, beta=1.0, mode="auto", samples=100_000)),
    "ou_tail_scan": (None, dict(t=REQUIRED, alphas=None, log_alphas=None, beta=1.0, mode="auto", samples=100_000)),
    "heat_content_band": (None, dict(t=0.0, alpha=REQUIRED, mode="auto")),
    "level_mass": ("paths", dict(alpha=REQUIRED, y_grid=REQUIRED, mode="mc", nse=3.0)),
    "doubling": ("paths", dict(alpha=REQUIRED, y=REQUIRED, beta=1.0)),
    "tail_shape": (None, dict(sigmas=[0.3, 0.4, 0.5], log_alphas=list(range(3, 21)), strict=True)),
    "scale_summation": (None, dict(alpha=REQUIRED, tol=1e-12)),
    "bound": (None, dict(alpha=None, log_alpha=None, beta=1.0, q0=None)),
    "cube_lsi": ("cube", dict(count=1, n=None, seed=None, tol=1e-10)),
    "cube_exactness": ("cube", dict(count=100, n=8, seed=0, law_n=4, tol=1e-12)),
    "cube_sampler_tv": ("cube", dict(n=4, samples=1_000_000, seed=0, tol=0.005)),
    "cube_martingale": ("cube", dict(tol=1e-12)),
    "cube_tail_scan": ("cube", dict(t=REQUIRED, alphas=REQUIRED)),
    "cube_perturbation": ("cube", dict(delta=0.5)),
    "sqrt_inequality": (None, dict(grid=100, hi=10.0, tol=0.0)),
}

DENSITY_KINDS = ("standard", "translate", "scaled", "mixture", "smoothed_indicator", "grid")
CUBE_KINDS = ("constant", "random-positive", "product", "indicator", "csv")


@dataclass
class OpSpec:
    name: str
    params: dict
    index: int


@dataclass
class ExperimentConfig:
    path: Path
    text: str
    raw: dict
    density: object
    density_spec: dict
    schedule: Schedule
    paths: int
    seed: int
    workers: int
    alpha: float
    delta: float
    out: Path
    ops: list
    cube: object = None
    verify_tol: float = None
    hash: str = field(default="")

    @property
    def needs_paths(self):
        return any(OPS[o.name][0] == "paths" for o in self.ops) or self.paths > 0


def _line_of(text, table, key):
    """Best-effort line number of ``key`` inside ``[table]`` (or top level)."""
    lines = text.splitlines()
    in_table = table is None
    header = re.compile(r"^\s*\[\[?\s*([^\]]+?)\s*\]\]?\s*$")
    for no, line in enumerate(lines, 1):
        m = header.match(line)
        if m:
            in_table = table is not None and m.group(1) == table
            continue
        if in_table and re.match(rf"^\s*{re.escape(key)}\s*=", line):
            return no
    return None


class _Checker:
    def __init__(self, text, path):
        self.text = text
        self.path = path

    def fail(self, where, msg, table=None, key=None):
        line = _line_of(self.text, table, key) if key else None
        loc = f"{self.path}:{line}: " if line else f"{self.path}: "
        raise ConfigError(f"{loc}{where}: {msg}")

    def number(self, tbl, key, default=REQUIRED, table=None, positive=False, integer=False, where=None):
        where = where or (f"{table}.{key}" if table else key)
        if key not in tbl:
            if default is REQUIRED:
                self.fail(where, "missing required field")
            return default
        v = tbl[key]
        ok = isinstance(v, int) if integer else isinstance(v, (int, float))
        if isinstance(v, bool) or not ok or (isinstance(v, float) and not math.isfinite(v)):
            self.fail(where, f"expected {'an integer' if integer else 'a number'}, got {v!r}", table, key)
        if positive and v <= 0:
            self.fail(where, f"must be positive, got {v!r}", table, key)
        return v


def load_config(path, overrides=None):
    """Parse and validate a config file; returns an ExperimentConfig."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    text = data.decode("utf-8", errors="replace")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML syntax error: {exc}") from None
    return build_config(raw, text=text, path=path, overrides=overrides or {}, digest=hashlib.sha256(data).hexdigest())


def build_config(raw, text="", path=Path("<config>"), overrides=None, digest=""):
    overrides = overrides or {}
    ck = _Checker(text, path)
    known = {"seed", "out", "density", "schedule", "run", "ops", "cube", "verify"}
    for k in raw:
        if k not in known:
            ck.fail(k, "unknown top-level field", None, k)

    run = raw.get("run", {})
    if not isinstance(run, dict):
        ck.fail("run", "must be a table")
    seed = overrides.get("seed")
    if seed is None:
        seed = ck.number(run, "seed", raw.get("seed", 0), table="run", integer=True)
    if not (0 <= int(seed) < 2**64):
        ck.fail("run.seed", "must be an unsigned 64-bit integer", "run", "seed")
    paths = ck.number(run, "paths", 0, table="run", integer=True)
    if paths < 0:
        ck.fail("run.paths", "must be nonnegative", "run", "paths")
    # precedence: --workers flag, then DRIFTLAB_WORKERS, then run.workers, then cpu count
    workers = overrides.get("workers")
    if workers is None and os.environ.get("DRIFTLAB_WORKERS"):
        try:
            workers = int(os.environ["DRIFTLAB_WORKERS"])
        except ValueError:
            raise ConfigError("DRIFTLAB_WORKERS must be an integer") from None
    if workers is None:
        workers = ck.number(run, "workers", None, table="run", integer=True)
    if workers is not None and workers < 1:
        ck.fail("run.workers", "must be at least 1", "run", "workers")
    alpha = ck.number(run, "alpha", None, table="run", positive=True)
    if alpha is not None and alpha <= 1:
        ck.fail("run.alpha", "must exceed 1", "run", "alpha")
    delta = ck.number(run, "delta", 0.0, table="run")
    if delta < 0:
        ck.fail("run.delta", "must be nonnegative", "run", "delta")

    density_spec = raw.get("density", {"kind": "standard"})
    density = _build_density(density_spec, ck, path)

    sched = raw.get("schedule", {})
    kind = sched.get("kind", "log-dense-terminal")
    if kind not in ("uniform", "log-dense-terminal"):
        ck.fail("schedule.kind", f"unknown schedule {kind!r}", "schedule", "kind")
    n_steps = ck.number(sched, "n_steps", 512, table="schedule", integer=True, positive=True)
    eta = ck.number(sched, "eta", 1e-4, table="schedule", positive=True)
    if eta > 0.01:
        ck.fail("schedule.eta", "must lie in (0, 0.01]", "schedule", "eta")
    if n_steps < 2:
        ck.fail("schedule.n_steps", "must be at least 2", "schedule", "n_steps")
    schedule = Schedule(kind, n_steps, eta)

    cube = _build_cube(raw["cube"], ck, path) if "cube" in raw else None

    ops_raw = raw.get("ops", [])
    if not isinstance(ops_raw, list):
        ck.fail("ops", "must be an array of tables ([[ops]])")
    ops = [_build_op(i, o, ck, density, cube) for i, o in enumerate(ops_raw)]

    verify = raw.get("verify", {})
    tol = ck.number(verify, "tol", None, table="verify") if isinstance(verify, dict) else None
    if tol is not None and tol < 0:
        ck.fail("verify.tol", "must be nonnegative", "verify", "tol")

    out = overrides.get("out") or raw.get("out") or "out"

    return ExperimentConfig(
        path=path, text=text, raw=raw, density=density, density_spec=density_spec, schedule=schedule,
        paths=int(paths), seed=int(seed), workers=workers, alpha=alpha, delta=float(delta), out=Path(out),
        ops=ops, cube=cube, verify_tol=tol, hash=digest,
    )


def _float_list(ck, v, where, table, key):
    if not isinstance(v, list) or not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in v):
        ck.fail(where, f"expected a list of numbers, got {v!r}", table, key)
    return [float(a) for a in v]


def _build_density(spec, ck, path):
    if not isinstance(spec, dict):
        ck.fail("density", "must be a table")
    kind = spec.get("kind")
    if kind not in DENSITY_KINDS:
        ck.fail("density.kind", f"expected one of {', '.join(DENSITY_KINDS)}, got {kind!r}", "density", "kind")
    dim = ck.number(spec, "dim", 1, table="density", integer=True, positive=True)
    try:
        if kind == "standard":
            return GaussianMixture.standard(dim)
        if kind == "translate":
            mu = spec.get("mu", [1.0] * dim)
            mu = _float_list(ck, mu if isinstance(mu, list) else [mu], "density.mu", "density", "mu")
            return GaussianMixture.translate(mu)
        if kind == "scaled":
            sigma = ck.number(spec, "sigma", table="density", positive=True)
            return GaussianMixture.scaled(sigma, dim)
        if kind == "mixture":
            w = _float_list(ck, spec.get("weights"), "density.weights", "density", "weights")
            means = spec.get("means")
            if not isinstance(means, list):
                ck.fail("density.means", "expected a list of mean vectors", "density", "means")
            means = [_float_list(ck, m if isinstance(m, list) else [m], "density.means", "density", "means") for m in means]
            var = _float_list(ck, spec.get("variances", [1.0] * len(w)), "density.variances", "density", "variances")
            return GaussianMixture(w, means, var)
        if kind == "smoothed_indicator":
            iv = spec.get("intervals")
            if not isinstance(iv, list) or not iv:
                ck.fail("density.intervals", "expected a list of [a, b] pairs", "density", "intervals")
            iv = [tuple(_float_list(ck, p, "density.intervals", "density", "intervals")) for p in iv]
            tau0 = ck.number(spec, "tau0", table="density", positive=True)
            return SmoothedIndicator1D(iv, tau0, method=spec.get("method", "exact"))
        grid_path = spec.get("grid_file")
        if not isinstance(grid_path, str):
            ck.fail("density.grid_file", "grid densities need a CSV path (columns x,log_f)", "density", "grid_file")
        p = Path(grid_path)
        if not p.is_absolute():
            p = path.parent / p
        return GridDensity1D.from_csv(p, method=spec.get("method", "exact"))
    except ConfigError:
        raise
    except (ValueError, TypeError, OSError) as exc:
        ck.fail("density", str(exc), "density", "kind")


def _build_cube(spec, ck, path):
    if not isinstance(spec, dict):
        ck.fail("cube", "must be a table")
    kind = spec.get("kind", "random-positive")
    if kind not in CUBE_KINDS:
        ck.fail("cube.kind", f"expected one of {', '.join(CUBE_KINDS)}, got {kind!r}", "cube", "kind")
    if kind == "csv":
        p = Path(spec.get("path", ""))
        return CubeFunction.from_csv(p if p.is_absolute() else path.parent / p)
    n = ck.number(spec, "n", table="cube", integer=True, positive=True)
    if n > MAX_N:
        ck.fail("cube.n", f"must be at most {MAX_N}", "cube", "n")
    seed = ck.number(spec, "seed", 0, table="cube", integer=True)
    if kind == "constant":
        return CubeFunction.constant(n)
    if kind == "random-positive":
        return CubeFunction.random_positive(n, seed)
    if kind == "product":
        b = spec.get("biases")
        return CubeFunction.product(n, None if b is None else _float_list(ck, b, "cube.biases", "cube", "biases"), seed)
    return CubeFunction.indicator(n, seed, members=spec.get("members"))


def _build_op(i, spec, ck, density, cube):
    where = f"ops[{i}]"
    if not isinstance(spec, dict) or "op" not in spec:
        ck.fail(where, "each [[ops]] entry needs an 'op' field")
    name = spec["op"]
    if name not in OPS:
        ck.fail(f"{where}.op", f"unknown operation {name!r}", "ops", "op")
    needs, defaults = OPS[name]
    params = {}
    for k in spec:
        if k != "op" and k not in defaults:
            ck.fail(f"{where}.{k}", f"unknown parameter for {name}", "ops", k)
    for k, default in defaults.items():
        if k not in spec:
            if default is REQUIRED:
                ck.fail(f"{where}.{k}", f"missing required parameter for {name}")
            params[k] = default
            continue
        v = spec[k]
        if isinstance(default, list) or k in ("alphas", "log_alphas", "y_grid", "lambdas", "gammas", "sigmas", "times"):
            v = _float_list(ck, v, f"{where}.{k}", "ops", k)
        elif isinstance(default, bool):
            if not isinstance(v, bool):
                ck.fail(f"{where}.{k}", "expected true or false", "ops", k)
        elif isinstance(default, str):
            if not isinstance(v, str):
                ck.fail(f"{where}.{k}", "expected a string", "ops", k)
        elif isinstance(v, bool) or not isinstance(v, (int, float)):
            ck.fail(f"{where}.{k}", f"expected a number, got {v!r}", "ops", k)
        params[k] = v

    if params.get("alpha") is not None and params["alpha"] <= 0:
        ck.fail(f"{where}.alpha", "must be positive", "ops", "alpha")
    if name in ("girsanov", "gradient_bound", "bad_events") and params["alpha"] < math.exp(3) - 1e-9:
        ck.fail(f"{where}.alpha", "must be at least e^3", "ops", "alpha")
    if name in ("tail_scan", "ou_tail_scan"):
        if (params["alphas"] is None) == (params["log_alphas"] is None):
            ck.fail(where, "give exactly one of alphas or log_alphas")
        grid = params["alphas"] or [math.exp(a) for a in params["log_alphas"]]
        if any(b <= a for a, b in zip(grid, grid[1:])):
            ck.fail(f"{where}.alphas", "grid must be increasing", "ops", "alphas" if params["alphas"] else "log_alphas")
        if params["mode"] not in ("auto", "exact", "mc"):
            ck.fail(f"{where}.mode", "expected auto, exact or mc", "ops", "mode")
        if params["mode"] == "exact" and density.dim != 1:
            raise UnsupportedDimensionError(f"{where}: exact tails need n = 1, the density has n = {density.dim}")
        if params["mode"] == "mc" and params["samples"] < 100_000:
            ck.fail(f"{where}.samples", "Monte Carlo tails need at least 100000 samples", "ops", "samples")
    if name in ("scale_summation", "endpoint_ks") and density.dim != 1:
        raise UnsupportedDimensionError(f"{where}: {name} needs n = 1, the density has n = {density.dim}")
    if name == "level_mass" and params["mode"] not in ("mc", "exact", "both"):
        ck.fail(f"{where}.mode", "expected mc, exact or both", "ops", "mode")
    if name == "level_mass" and params["mode"] != "mc" and density.dim != 1:
        raise UnsupportedDimensionError(f"{where}: exact level masses need n = 1")
    if name == "bound":
        if (params["alpha"] is None) == (params["log_alpha"] is None):
            ck.fail(where, "give exactly one of alpha or log_alpha")
        la = params["log_alpha"] if params["log_alpha"] is not None else math.log(params["alpha"])
        if la < 3:
            ck.fail(where, "alpha must be at least e^3", "ops", "alpha" if params["alpha"] else "log_alpha")
        if params["beta"] < 1:
            ck.fail(f"{where}.beta", "must be at least 1", "ops", "beta")
    if needs == "cube" and name in ("cube_martingale", "cube_tail_scan", "cube_perturbation") and cube is None:
        ck.fail(where, f"{name} needs a [cube] table")
    if name == "cube_lsi" and cube is None and params["n"] is None:
        ck.fail(where, "cube_lsi needs a [cube] table or an n parameter")
    for k in ("n", "law_n"):
        if k in params and params[k] is not None and not (1 <= params[k] <= MAX_N):
            ck.fail(f"{where}.{k}", f"must be in [1, {MAX_N}]", "ops", k)
    if name == "cube_perturbation" and not 0 <= params["delta"] <= 1:
        ck.fail(f"{where}.delta", "must lie in [0, 1]", "ops", "delta")
    return OpSpec(name, params, i)

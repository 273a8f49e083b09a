"""Experiment runner: TOML configs, per-cell trace CSVs, summaries and manifests.

A run expands a config into (method, seed) cells.  Every cell writes one
trace CSV atomically, so an interrupted run can resume by skipping cells
whose file exists.  Wall-clock times go to a separate ``timing.csv`` so
trace files are byte-identical across repeated runs.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .bo import AcquisitionSpec, BoConfig, InnerConfig, run_bo
from .bq import BqConfig, gaussian_bump_problem, run_bq
from .dual import ObservationSet, condition_number, rescale
from .hyper import HyperPriorSpec, McmcConfig, rescaled_evidence, sample_hypers
from .kernels import DerivOrder, Family, KernelSpec, build_joint_gram, orders_up_to, vech
from .objectives import asd_objective, get_objective, make_asd_data
from .spectral import build_grid, reconstruct_kernel

log = logging.getLogger(__name__)

OUT_ENV = "DERIVGP_OUT"
DEFAULT_OUT = "runs"


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


class MissingTraces(FileNotFoundError):
    """A directory to summarize holds no trace files."""


class Kind(str, enum.Enum):
    BO_RACE = "bo_race"
    BQ_ERROR = "bq_error"
    CONDITION_SWEEP = "condition_sweep"
    KERNEL_VALIDATION = "kernel_validation"
    HYPER_CONTRACTION = "hyper_contraction"


LEVELS = {"plain": DerivOrder.VALUE, "grad": DerivOrder.GRADIENT, "hess": DerivOrder.HESSIAN}


# -- config ------------------------------------------------------------------


@dataclass(frozen=True)
class Method:
    level: str = "hess"
    family: str = "se"
    backend: str = "dual"
    name: str = ""

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ConfigError(f"methods.level must be one of {sorted(LEVELS)}, got {self.level!r}")
        Family(self.family)
        if self.backend not in ("dual", "spectral", "auto"):
            raise ConfigError(f"methods.backend must be dual, spectral or auto, got {self.backend!r}")
        if not self.name:
            object.__setattr__(self, "name", self.level)

    @property
    def order(self) -> DerivOrder:
        return LEVELS[self.level]


@dataclass(frozen=True)
class BoSection:
    n_init: int = 3
    acquisition: str = "ucb"
    ucb_kappa: float = 2.0
    ei_xi: float = 0.01
    n_candidates: int = 1024
    n_starts: int = 5
    noise_var: float = 1e-6
    spectral_threshold: float = 0.25
    stop_at_tolerance: bool = False


@dataclass(frozen=True)
class McmcSection:
    n_samples: int = 50
    burn_in: int = 500
    thinning: int = 5
    step: float = 0.25
    warm_burn_in: int = 20


@dataclass(frozen=True)
class BqSection:
    rho: float = 1.0
    delta: float = 0.5
    n_candidates: int = 256
    candidate_width: float = 4.0
    rule: str = "integrand"
    noise_var: float = 1e-6
    grid_t: float = 8.0
    mu_range: tuple = (-1.0, 1.0)
    ell_range: tuple = (0.4, 0.8)


@dataclass(frozen=True)
class SweepSection:
    delta_min: float = 0.01
    delta_max: float = 10.0
    n_deltas: int = 50
    n_points: int = 100
    spacing: float = 0.2
    noise_var: float = 1e-6


@dataclass(frozen=True)
class ValidationSection:
    dims: tuple = (1, 2, 3)
    families: tuple = ("se", "matern52_factorizable")
    n_points: int = 4
    t: float = 10.0
    cond_target: float = 1e14


@dataclass(frozen=True)
class ContractionSection:
    n_points: int = 5
    noise_var: float = 1e-6


@dataclass(frozen=True)
class AsdSection:
    n: int = 200
    p: int = 40
    noise_var: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    kind: Kind
    name: str
    objective: str = ""
    methods: tuple = ()
    seeds: tuple = (0,)
    budget: int = 50
    tolerance: float = 0.01
    bo: BoSection = BoSection()
    mcmc: McmcSection = McmcSection()
    bq: BqSection = BqSection()
    sweep: SweepSection = SweepSection()
    validation: ValidationSection = ValidationSection()
    contraction: ContractionSection = ContractionSection()
    asd: AsdSection = AsdSection()

    def to_dict(self) -> dict:
        def conv(v):
            if dataclasses.is_dataclass(v):
                return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
            if isinstance(v, enum.Enum):
                return v.value
            if isinstance(v, (tuple, list)):
                return [conv(x) for x in v]
            return v
        return conv(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


SECTIONS = {"bo": BoSection, "mcmc": McmcSection, "bq": BqSection, "sweep": SweepSection,
            "validation": ValidationSection, "contraction": ContractionSection,
            "asd": AsdSection}


def _build(cls, table: dict, where: str):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigError(f"[{where}] unknown key(s): {', '.join(unknown)}")
    kw = {}
    for key, val in table.items():
        default = known[key].default
        if isinstance(default, tuple) and isinstance(val, list):
            val = tuple(val)
        elif isinstance(default, float) and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        elif default is not dataclasses.MISSING and default is not None \
                and not isinstance(val, type(default)):
            raise ConfigError(f"[{where}].{key}: expected {type(default).__name__}, "
                              f"got {type(val).__name__}")
        kw[key] = val
    try:
        return cls(**kw)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[{where}]: {err}") from err


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a parsed TOML document; unknown keys are errors."""
    data = dict(data)
    top = {"kind", "name", "objective", "methods", "seeds", "budget", "tolerance", *SECTIONS}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    if "kind" not in data:
        raise ConfigError("missing required key 'kind'")
    try:
        kind = Kind(data["kind"])
    except ValueError:
        raise ConfigError(f"kind must be one of {[k.value for k in Kind]}, got {data['kind']!r}")
    name = data.get("name", kind.value)
    if not isinstance(name, str) or not name or any(c in name for c in "/\\"):
        raise ConfigError("name must be a nonempty string without path separators")
    methods = []
    for i, m in enumerate(data.get("methods", [])):
        if isinstance(m, str):
            m = {"level": m}
        try:
            methods.append(_build(Method, m, f"methods[{i}]"))
        except ValueError as err:
            raise ConfigError(str(err)) from err
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ConfigError("method names must be distinct")
    seeds = data.get("seeds", [0])
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    if not all(isinstance(s, int) and s >= 0 for s in seeds) or len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct nonnegative integers (or a count)")
    needs_methods = kind in (Kind.BO_RACE, Kind.BQ_ERROR, Kind.HYPER_CONTRACTION)
    if needs_methods and not methods:
        raise ConfigError(f"{kind.value} needs a nonempty 'methods' list")
    objective = data.get("objective", "")
    if kind is Kind.BO_RACE:
        if objective != "asd":
            try:
                get_objective(objective)
            except KeyError as err:
                raise ConfigError(f"unknown objective {objective!r}") from err
    budget = data.get("budget", 50)
    if not isinstance(budget, int) or budget < 0:
        raise ConfigError("budget must be a nonnegative integer")
    tol = data.get("tolerance", 0.01)
    if not isinstance(tol, (int, float)) or not tol > 0:
        raise ConfigError("tolerance must be positive")
    sections = {k: _build(cls, data.get(k, {}), k) for k, cls in SECTIONS.items()}
    if kind is Kind.BO_RACE and budget < sections["bo"].n_init:
        raise ConfigError("budget must be at least bo.n_init")
    return ExperimentConfig(kind, name, objective, tuple(methods), tuple(seeds), budget,
                            float(tol), **sections)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"{path}: no such file") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err
    try:
        return parse_config(data)
    except ConfigError as err:
        raise ConfigError(f"{path}: {err}") from err


# -- files -------------------------------------------------------------------


def fmt(v) -> str:
    """Round-trip float text (17 significant digits); other values via str."""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    atomic_write(path, buf.getvalue())


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def output_root(out: str | None = None) -> Path:
    return Path(out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


# -- cells -------------------------------------------------------------------


def _bo_objective(cfg: ExperimentConfig, seed: int):
    if cfg.objective == "asd":
        a = cfg.asd
        return asd_objective(make_asd_data(a.n, a.p, noise_var=a.noise_var, seed=seed))
    return get_objective(cfg.objective)


def target_tolerance(cfg: ExperimentConfig, optimum: float) -> float:
    """Absolute tolerance: ``tolerance * max(|f*|, 1)``."""
    return cfg.tolerance * max(abs(optimum), 1.0)


def _bo_cell(cfg: ExperimentConfig, method: Method, seed: int):
    obj = _bo_objective(cfg, seed)
    b, m = cfg.bo, cfg.mcmc
    stop = None
    if b.stop_at_tolerance and obj.optimum_value is not None:
        stop = target_tolerance(cfg, obj.optimum_value)
    bcfg = BoConfig(
        budget=cfg.budget, n_init=b.n_init, level=method.order, backend=method.backend,
        family=method.family,
        mcmc=McmcConfig(m.n_samples, m.burn_in, m.thinning, (m.step, m.step)),
        warm_burn_in=m.warm_burn_in,
        acquisition=AcquisitionSpec(b.acquisition, b.ei_xi, b.ucb_kappa),
        inner=InnerConfig(b.n_candidates, b.n_starts), noise_var=b.noise_var,
        spectral_threshold=b.spectral_threshold, stop_within=stop, seed=seed)
    trace = run_bo(obj, bcfg)
    d = obj.dim
    header = ["experiment", "method", "seed", "iteration", "phase",
              *[f"x{i}" for i in range(d)], "f", "incumbent", "distance",
              "rho_mean", "delta_mean", "acceptance", "backend"]
    rows, times = [], []
    for r in trace.records:
        rows.append([cfg.name, method.name, seed, r.iteration, r.phase, *r.x, r.f,
                     r.best_value, r.distance, r.rho_mean, r.delta_mean,
                     r.acceptance_rate, r.backend])
        times.append(r.wall_time)
    meta = {"optimum": obj.optimum_value, "direction": obj.direction,
            "failed": trace.failed, "message": trace.message}
    return header, rows, times, meta


def _bq_problem(cfg: ExperimentConfig, seed: int):
    r = np.random.default_rng([seed, 8])
    q = cfg.bq
    return gaussian_bump_problem(mu=float(r.uniform(*q.mu_range)),
                                 ell=float(r.uniform(*q.ell_range)))


def _bq_cell(cfg: ExperimentConfig, method: Method, seed: int):
    q = cfg.bq
    problem = _bq_problem(cfg, seed)
    bcfg = BqConfig(kernel=KernelSpec(method.family, q.rho, q.delta, 1), level=method.order,
                    budget=cfg.budget, n_candidates=q.n_candidates,
                    candidate_width=q.candidate_width, rule=q.rule, noise_var=q.noise_var,
                    grid_t=q.grid_t, seed=seed)
    t0 = time.perf_counter()
    state = run_bq(problem, bcfg)
    elapsed = time.perf_counter() - t0
    header = ["experiment", "method", "seed", "iteration", "x", "mean", "variance", "error"]
    xs = [math.nan] + list(state.X[:, 0])
    rows = [[cfg.name, method.name, seed, i, xs[i], E, V, err]
            for i, (E, V, err) in enumerate(state.history)]
    meta = {"z_true": problem.z_true, "prior_error": state.history[0][2]}
    return header, rows, [elapsed] * len(rows), meta


def contraction_points(n: int, seed: int) -> np.ndarray:
    return np.sort(np.random.default_rng([seed, 6]).uniform(-1, 1, size=n))


def _contraction_cell(cfg: ExperimentConfig, method: Method, seed: int):
    obj = get_objective("forrester1d")
    c, m = cfg.contraction, cfg.mcmc
    X = contraction_points(c.n_points, seed)
    vals = [obj.evaluate([x], DerivOrder.HESSIAN) for x in X]
    f = np.array([v[0] for v in vals])
    mu, sd = f.mean(), f.std()
    g = np.array([v[1] for v in vals]) / sd
    h = np.array([vech(v[2]) for v in vals]) / sd
    full = ObservationSet(X[:, None], (f - mu) / sd, g, h, c.noise_var)
    obs = full.truncate(method.order)
    prior = HyperPriorSpec.default(obj.bounds, obs.f)
    mcfg = McmcConfig(m.n_samples, m.burn_in, m.thinning, (m.step, m.step), seed=seed,
                      strict=False)
    t0 = time.perf_counter()
    res = sample_hypers(obs, prior, mcfg, Family(method.family), rescaled_evidence,
                        noise_var=c.noise_var)
    elapsed = time.perf_counter() - t0
    header = ["experiment", "method", "seed", "iteration", "rho", "delta", "delta2", "log_post"]
    rows = [[cfg.name, method.name, seed, i, s.rho, s.delta, s.delta2, s.log_post]
            for i, s in enumerate(res.samples)]
    meta = {"acceptance": res.acceptance_rate, "delta2_var": float(np.var(res.delta2(), ddof=1))}
    return header, rows, [elapsed] * len(rows), meta


CELL_RUNNERS = {Kind.BO_RACE: _bo_cell, Kind.BQ_ERROR: _bq_cell,
                Kind.HYPER_CONTRACTION: _contraction_cell}


def trace_path(root: Path, method: str, seed: int) -> Path:
    return root / "traces" / f"{method}__seed{seed}.csv"


def _run_cell(args):
    cfg, method, seed, root = args
    t0 = time.perf_counter()
    try:
        header, rows, times, meta = CELL_RUNNERS[cfg.kind](cfg, method, seed)
    except Exception as err:  # noqa: BLE001 - recorded, siblings continue
        log.exception("cell %s/%s failed", method.name, seed)
        meta = {"error": f"{type(err).__name__}: {err}"}
        atomic_write(root / "meta" / f"{method.name}__seed{seed}.json",
                     json.dumps(meta, sort_keys=True) + "\n")
        return method.name, seed, meta, []
    meta = dict(meta)
    meta["elapsed"] = time.perf_counter() - t0
    atomic_write(root / "meta" / f"{method.name}__seed{seed}.json",
                 json.dumps(meta, sort_keys=True, default=_json_default) + "\n")
    write_csv(trace_path(root, method.name, seed), header, rows)
    return method.name, seed, meta, times


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v).__name__)


# -- single-file experiments --------------------------------------------------


def condition_sweep_rows(deltas, n_points: int = 100, spacing: float = 0.2,
                         noise_var: float = 1e-6, rho: float = 1.0) -> list[list]:
    """Condition numbers of SE Gram matrices on a 1D lattice across length scales.

    Columns: delta, plain, grad, hess (all unscaled) and hess after rescaling.
    """
    X = (np.arange(n_points) * spacing)[:, None]
    rows = []
    for delta in deltas:
        spec = KernelSpec(Family.SE, rho, float(delta), 1)
        conds = [condition_number(build_joint_gram(spec, X, orders_up_to(lv), noise_var))
                 for lv in (0, 1, 2)]
        obs = ObservationSet(X, np.zeros(n_points), np.zeros((n_points, 1)),
                             np.zeros((n_points, 1)), noise_var)
        spec1, obs1, noise1 = rescale(spec, obs)
        rescaled = condition_number(build_joint_gram(spec1, obs1.X, obs1.orders, noise1))
        rows.append([float(delta), *conds, rescaled])
    return rows


SWEEP_HEADER = ["delta", "cond_plain", "cond_grad", "cond_hess", "cond_hess_rescaled"]


def kernel_validation_rows(dims=(1, 2, 3), families=("se", "matern52_factorizable"),
                           n_points: int = 4, t: float = 10.0, cond_target: float = 1e14,
                           seed: int = 0) -> list[list]:
    """Max-abs deviation between spectral reconstruction and the exact Gram, per block."""
    rng = np.random.default_rng(seed)
    rows = []
    for fam in families:
        for d in dims:
            spec = KernelSpec(Family(fam), 1.0, 0.7, d)
            level = min(spec.max_order, DerivOrder.HESSIAN)
            orders = orders_up_to(level)
            X = rng.uniform(0, 2, size=(n_points, d))
            span = float(np.max(X.max(0) - X.min(0)))
            grid = build_grid(span, spec, t, cond_target, max_size=None)
            R = reconstruct_kernel(spec, grid, X, orders, method="factorized")
            K = build_joint_gram(spec, X, orders, None)
            sizes = [o.block_size(d) * n_points for o in orders]
            off = np.concatenate([[0], np.cumsum(sizes)])
            for i, ro in enumerate(orders):
                for j, co in enumerate(orders):
                    if j < i:
                        continue
                    blk = np.s_[off[i]:off[i + 1], off[j]:off[j + 1]]
                    dev = float(np.max(np.abs(R[blk] - K[blk])))
                    scale = float(np.max(np.abs(K[blk])))
                    rows.append([fam, d, ro.name.lower(), co.name.lower(), dev,
                                 dev / scale if scale > 0 else 0.0, grid.c])
    return rows


VALIDATION_HEADER = ["family", "dim", "row_order", "col_order", "max_abs_dev", "rel_dev",
                     "cutoff"]


# -- summaries ---------------------------------------------------------------


def _quantiles(a: np.ndarray) -> dict:
    q1, med, q3 = np.percentile(a, [25, 50, 75], axis=0)
    return {"median": med.tolist(), "q1": q1.tolist(), "q3": q3.tolist()}


def _pad(series: list[np.ndarray]) -> np.ndarray:
    """Stack ragged runs, carrying the last value forward (early-stopped runs)."""
    n = max(len(s) for s in series)
    return np.array([np.concatenate([s, np.full(n - len(s), s[-1])]) for s in series])


def _group(rows: list[dict]) -> dict[str, dict[int, list[dict]]]:
    out: dict[str, dict[int, list[dict]]] = {}
    for r in rows:
        out.setdefault(r["method"], {}).setdefault(int(r["seed"]), []).append(r)
    for per_seed in out.values():
        for k in per_seed:
            per_seed[k].sort(key=lambda r: int(r["iteration"]))
    return out


def _order_verdict(medians: dict[str, float], order=("hess", "grad", "plain")) -> bool | None:
    present = [m for m in order if m in medians]
    if len(present) < 2:
        return None
    return all(medians[a] <= medians[b] for a, b in zip(present, present[1:]))


def summarize_bo(rows: list[dict], manifest: dict) -> dict:
    groups = _group(rows)
    optimum = manifest.get("optimum")
    direction = manifest.get("direction", "min")
    budget = manifest.get("budget")
    tol = None if optimum is None else manifest["tolerance"] * max(abs(optimum), 1.0)
    out = {"methods": {}}
    medians = {}
    for method, per_seed in sorted(groups.items()):
        inc = [np.array([float(r["incumbent"]) for r in rs]) for _, rs in sorted(per_seed.items())]
        dist = [np.array([float(r["distance"]) for r in rs]) for _, rs in sorted(per_seed.items())]
        entry = {"n_seeds": len(inc), "incumbent": _quantiles(_pad(inc)),
                 "distance": _quantiles(_pad(dist)),
                 "final_incumbent": [float(s[-1]) for s in inc]}
        if tol is not None:
            its = []
            for s in inc:
                hit = np.flatnonzero(np.abs(s - optimum) <= tol)
                # censored runs count as budget + 1
                its.append(int(hit[0]) + 1 if len(hit) else (budget or len(s)) + 1)
            entry["iterations_to_tolerance"] = its
            entry["median_iterations"] = float(np.median(its))
            medians[method] = entry["median_iterations"]
        out["methods"][method] = entry
    out["tolerance_abs"] = tol
    out["verdicts"] = {"ordering_hess_grad_plain": _order_verdict(medians)}
    if "hess" in medians and "plain" in medians:
        out["verdicts"]["hess_over_plain"] = medians["hess"] / medians["plain"]
    if optimum is None:
        finals = {m: e["final_incumbent"] for m, e in out["methods"].items()}
        if "grad" in finals and "plain" in finals:
            better = (lambda a, b: a > b) if direction == "max" else (lambda a, b: a < b)
            wins = sum(better(a, b) for a, b in zip(finals["grad"], finals["plain"]))
            out["verdicts"]["grad_beats_plain"] = f"{wins}/{len(finals['grad'])}"
            out["verdicts"]["grad_wins"] = wins
    return out


def summarize_bq(rows: list[dict], manifest: dict) -> dict:
    out = {"methods": {}}
    finals = {}
    for method, per_seed in sorted(_group(rows).items()):
        err = [np.array([float(r["error"]) for r in rs]) for _, rs in sorted(per_seed.items())]
        prior = np.array([e[0] for e in err])
        final = np.array([e[-1] for e in err])
        out["methods"][method] = {"n_seeds": len(err), "error": _quantiles(_pad(err)),
                                  "mean_final_error": float(final.mean()),
                                  "mean_prior_error": float(prior.mean()),
                                  "max_final_relative": float(np.max(final / prior))}
        finals[method] = float(final.mean())
    if "hess" in finals and "plain" in finals:
        out["verdicts"] = {"hess_le_plain": finals["hess"] <= finals["plain"]}
    return out


def summarize_contraction(rows: list[dict], manifest: dict) -> dict:
    out = {"methods": {}}
    for method, per_seed in sorted(_group(rows).items()):
        v = [float(np.var([float(r["delta2"]) for r in rs], ddof=1))
             for _, rs in sorted(per_seed.items())]
        out["methods"][method] = {"n_seeds": len(v), "delta2_var": v,
                                  "mean_delta2_var": float(np.mean(v))}
    m = out["methods"]
    if "hess" in m and "plain" in m:
        out["verdicts"] = {"hess_contracts": m["hess"]["mean_delta2_var"]
                           < m["plain"]["mean_delta2_var"]}
    return out


SUMMARIZERS = {Kind.BO_RACE.value: summarize_bo, Kind.BQ_ERROR.value: summarize_bq,
               Kind.HYPER_CONTRACTION.value: summarize_contraction}


def summarize(directory) -> dict:
    """Aggregate the traces under ``directory`` and write ``summary.json``."""
    root = Path(directory)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise MissingTraces(f"{root}: no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    kind = manifest["kind"]
    if kind in SUMMARIZERS:
        files = sorted((root / "traces").glob("*.csv"))
        if not files:
            raise MissingTraces(f"{root}: no trace files")
        rows = [r for p in files for r in read_csv(p)]
        summary = SUMMARIZERS[kind](rows, manifest)
    else:
        table = root / f"{kind}.csv"
        if not table.exists():
            raise MissingTraces(f"{root}: no {table.name}")
        rows = read_csv(table)
        summary = {"rows": len(rows)}
        if kind == Kind.KERNEL_VALIDATION.value:
            rel = [float(r["rel_dev"]) for r in rows]
            summary["max_rel_dev"] = max(rel)
            summary["verdicts"] = {"within_1e-6": max(rel) <= 1e-6}
    failures = {}
    meta_dir = root / "meta"
    if meta_dir.exists():
        for p in sorted(meta_dir.glob("*.json")):
            meta = json.loads(p.read_text())
            if meta.get("error") or meta.get("failed"):
                failures[p.stem] = meta.get("error") or meta.get("message")
    summary["failures"] = failures
    summary["kind"] = kind
    atomic_write(root / "summary.json", json.dumps(summary, indent=2, sort_keys=True,
                                                   default=_json_default) + "\n")
    return summary


# -- run ---------------------------------------------------------------------


def run(cfg: ExperimentConfig, out: str | Path | None = None, jobs: int = 1,
        resume: bool = False) -> tuple[Path, dict]:
    """Execute an experiment; returns the output directory and the summary.

    The summary's ``failures`` map is nonempty when any cell failed.
    """
    root = output_root(out) / cfg.name
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"name": cfg.name, "kind": cfg.kind.value, "config": cfg.to_dict(),
                "config_sha256": cfg.digest(), "seeds": list(cfg.seeds),
                "version": __version__, "budget": cfg.budget, "tolerance": cfg.tolerance,
                "numpy": np.__version__}
    if cfg.kind is Kind.BO_RACE and cfg.objective != "asd":
        obj = get_objective(cfg.objective)
        manifest.update(optimum=obj.optimum_value, direction=obj.direction)
    elif cfg.kind is Kind.BO_RACE:
        manifest.update(optimum=None, direction="max")
    old = root / "manifest.json"
    if resume and old.exists():
        prev = json.loads(old.read_text())
        if prev.get("config_sha256") != manifest["config_sha256"]:
            raise ConfigError(f"{root}: existing run has a different config; refusing to resume")
    atomic_write(old, json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")

    if cfg.kind is Kind.CONDITION_SWEEP:
        s = cfg.sweep
        deltas = np.logspace(np.log10(s.delta_min), np.log10(s.delta_max), s.n_deltas)
        write_csv(root / "condition_sweep.csv", SWEEP_HEADER,
                  condition_sweep_rows(deltas, s.n_points, s.spacing, s.noise_var))
        return root, summarize(root)
    if cfg.kind is Kind.KERNEL_VALIDATION:
        v = cfg.validation
        write_csv(root / "kernel_validation.csv", VALIDATION_HEADER,
                  kernel_validation_rows(v.dims, v.families, v.n_points, v.t, v.cond_target,
                                         cfg.seeds[0]))
        return root, summarize(root)

    cells = [(cfg, m, s, root) for m in cfg.methods for s in cfg.seeds
             if not (resume and trace_path(root, m.name, s).exists())]
    results = []
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    timing = root / "timing.csv"
    prev_rows = read_csv(timing) if (resume and timing.exists()) else []
    t_rows = [[r["method"], int(r["seed"]), int(r["iteration"]), float(r["wall_time"])]
              for r in prev_rows]
    for method, seed, meta, times in results:
        t_rows += [[method, seed, i, t] for i, t in enumerate(times)]
    t_rows.sort(key=lambda r: (r[0], r[1], r[2]))
    write_csv(timing, ["method", "seed", "iteration", "wall_time"], t_rows)
    return root, summarize(root)

"""Bayesian optimization with value, gradient and Hessian observations.

The loop maximizes internally; minimization objectives are negated
(values and derivatives alike).  Each iteration samples (rho, delta) by
MCMC, averages the acquisition over the samples, maximizes it on a Sobol
sweep plus coordinate refinement, and evaluates the objective.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import stats
from scipy.stats import qmc

from .dual import FactorizationFailed, ObservationSet, fit_rescaled
from .hyper import HyperPriorSpec, HyperSample, McmcConfig, rescaled_evidence, sample_hypers
from .kernels import DerivOrder, Family, KernelSpec, vech
from .objectives import Objective
from .spectral import GridTooLarge, build_grid, spectral_model, spectral_predict, update_with

log = logging.getLogger(__name__)


class AcqKind(str, enum.Enum):
    EI = "ei"
    UCB = "ucb"


class Backend(str, enum.Enum):
    DUAL = "dual"
    SPECTRAL = "spectral"
    AUTO = "auto"


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: AcqKind = AcqKind.UCB
    ei_xi: float = 0.01
    ucb_kappa: float = 2.0
    direction: str = "max"

    def __post_init__(self):
        object.__setattr__(self, "kind", AcqKind(self.kind))
        if self.ei_xi < 0 or not self.ucb_kappa > 0:
            raise ValueError("need ei_xi >= 0 and ucb_kappa > 0")
        if self.direction not in ("max", "min"):
            raise ValueError("direction must be 'max' or 'min'")


def expected_improvement(mean, sd, incumbent, xi: float = 0.01, direction: str = "max"):
    """Closed-form EI of a Gaussian over the incumbent; zero-sd limit handled."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    imp = (mean - incumbent - xi) if direction == "max" else (incumbent - mean - xi)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(sd > 0, imp / np.where(sd > 0, sd, 1.0), 0.0)
        ei = imp * stats.norm.cdf(z) + sd * stats.norm.pdf(z)
    ei = np.where(sd > 0, ei, np.maximum(imp, 0.0))
    return np.maximum(ei, 0.0)


def ucb(mean, sd, kappa: float = 2.0, direction: str = "max"):
    """mean + kappa sd; for minimization the score of -mean is returned."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    return mean + kappa * sd if direction == "max" else -mean + kappa * sd


@dataclass(frozen=True)
class InnerConfig:
    n_candidates: int = 1024
    n_starts: int = 5
    initial_step: float = 0.05
    tol: float = 1e-4


def _interior(x, bounds):
    lo, hi = bounds[:, 0], bounds[:, 1]
    pad = 1e-9 * (hi - lo)
    return np.clip(x, lo + pad, hi - pad)


def maximize_acquisition(acq: Callable[[np.ndarray], np.ndarray], bounds,
                         inner: InnerConfig = InnerConfig(), rng=None) -> np.ndarray:
    """Maximize a vectorized acquisition over a box.

    A scrambled Sobol sweep picks starting points; each of the best
    ``inner.n_starts`` is refined by a multi-scale compass search: every
    round tries all coordinate moves at step sizes ``initial_step / 2**k``
    (down to ``tol``, as fractions of the box width) in one batch and takes
    the best improving move.  A start stops when no move improves it.
    """
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    d = len(bounds)
    rng = np.random.default_rng(rng)
    lo, width = bounds[:, 0], bounds[:, 1] - bounds[:, 0]
    m = max(int(math.ceil(math.log2(max(inner.n_candidates, 2)))), 1)
    sobol = qmc.Sobol(d, scramble=True, seed=rng)
    cand = _interior(lo + width * sobol.random_base2(m)[: inner.n_candidates], bounds)
    vals = np.asarray(acq(cand), dtype=float)
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    order = np.argsort(-vals, kind="stable")[: inner.n_starts]
    xs, fs = cand[order].copy(), vals[order].copy()
    n_scales = max(int(math.ceil(math.log2(inner.initial_step / inner.tol))), 0) + 1
    scales = inner.initial_step * 0.5 ** np.arange(n_scales)
    eye = np.eye(d)
    moves = (np.concatenate([eye, -eye])[None] * scales[:, None, None]).reshape(-1, d) * width
    active = np.isfinite(fs)
    for _ in range(200):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        trial = _interior((xs[idx, None, :] + moves[None]).reshape(-1, d), bounds)
        tv = np.asarray(acq(trial), dtype=float).reshape(len(idx), len(moves))
        tv = np.where(np.isfinite(tv), tv, -np.inf)
        best = np.argmax(tv, axis=1)
        for k, i in enumerate(idx):
            if tv[k, best[k]] > fs[i]:
                xs[i] = trial[k * len(moves) + best[k]]
                fs[i] = tv[k, best[k]]
            else:
                active[i] = False
    i = int(np.argmax(fs))
    if not np.isfinite(fs[i]):
        return cand[0]
    return xs[i]


# -- loop --------------------------------------------------------------------


@dataclass(frozen=True)
class BoConfig:
    bounds: np.ndarray | None = None
    budget: int = 50
    n_init: int = 3
    level: DerivOrder = DerivOrder.HESSIAN
    backend: Backend = Backend.AUTO
    family: Family = Family.SE
    mcmc: McmcConfig = McmcConfig()
    warm_burn_in: int = 20
    acquisition: AcquisitionSpec = AcquisitionSpec()
    inner: InnerConfig = InnerConfig()
    noise_var: float = 1e-6
    spectral_threshold: float = 0.25
    spectral_t: float = 6.0
    spectral_cond: float = 1e14
    stop_within: float | None = None   # stop once |incumbent - known optimum| <= this
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "level", DerivOrder(self.level))
        object.__setattr__(self, "backend", Backend(self.backend))
        object.__setattr__(self, "family", Family(self.family))
        if self.n_init < 1 or self.budget < self.n_init:
            raise ValueError("need n_init >= 1 and budget >= n_init")
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
            if np.any(b[:, 0] >= b[:, 1]):
                raise ValueError("each bound needs lo < hi")
            object.__setattr__(self, "bounds", b)


@dataclass
class BoRecord:
    iteration: int
    phase: str
    x: np.ndarray
    f: float
    grad: np.ndarray | None
    hess: np.ndarray | None
    best_value: float
    best_x: np.ndarray
    distance: float
    wall_time: float
    rho_mean: float = float("nan")
    delta_mean: float = float("nan")
    acceptance_rate: float = float("nan")
    backend: str = ""
    status: str = "ok"


@dataclass
class BoTrace:
    objective: str
    level: DerivOrder
    seed: int
    records: list[BoRecord] = field(default_factory=list)
    failed: bool = False
    message: str = ""

    @property
    def best_values(self) -> np.ndarray:
        return np.array([r.best_value for r in self.records])

    @property
    def distances(self) -> np.ndarray:
        return np.array([r.distance for r in self.records])

    def iterations_to(self, target: float, tol: float, direction: str = "min") -> int:
        """First evaluation count (1-based) whose incumbent is within ``tol`` of ``target``.

        Returns ``len(records) + 1`` when never reached.
        """
        for r in self.records:
            if abs(r.best_value - target) <= tol:
                return r.iteration + 1
        return len(self.records) + 1


class Surrogate:
    """Marginalized GP posterior over hyperparameter samples for one iteration."""

    def __init__(self, obs: ObservationSet, samples: list[HyperSample], cfg: BoConfig,
                 span: float):
        self.obs = obs
        self.samples = samples
        self.cfg = cfg
        self.span = span
        self.models = []
        self.backends = []
        for s in samples:
            model, used = self._build(s)
            self.models.append(model)
            self.backends.append(used)

    def _use_spectral(self, delta: float) -> bool:
        if self.cfg.backend is Backend.SPECTRAL:
            return True
        if self.cfg.backend is Backend.DUAL:
            return False
        return delta > self.cfg.spectral_threshold * self.span

    def _build(self, s: HyperSample):
        spec = KernelSpec(self.cfg.family, s.rho, s.delta, self.obs.dim)
        if self._use_spectral(s.delta):
            try:
                grid = build_grid(self.span, spec, self.cfg.spectral_t, self.cfg.spectral_cond)
                model = update_with(spectral_model(spec, grid, self.cfg.noise_var), self.obs)
                return model, "spectral"
            except (GridTooLarge, FactorizationFailed, ValueError) as err:
                log.debug("spectral backend unavailable (%s); using dual", err)
        try:
            return fit_rescaled(spec, self.obs), "dual"
        except FactorizationFailed:
            if self.cfg.backend is Backend.DUAL:
                raise
            grid = build_grid(self.span, spec, self.cfg.spectral_t, self.cfg.spectral_cond)
            return update_with(spectral_model(spec, grid, self.cfg.noise_var), self.obs), "spectral"

    def predict_each(self, xs):
        for model in self.models:
            if hasattr(model, "weights"):
                yield model.predict(xs)
            else:
                yield spectral_predict(model, xs)

    def acquisition(self, incumbent: float) -> Callable[[np.ndarray], np.ndarray]:
        """Acquisition averaged over the hyperparameter samples (maximization)."""
        acq = self.cfg.acquisition

        def fn(xs):
            total = np.zeros(len(xs))
            for mean, var in self.predict_each(xs):
                sd = np.sqrt(var)
                if acq.kind is AcqKind.EI:
                    total += expected_improvement(mean, sd, incumbent, acq.ei_xi, "max")
                else:
                    total += ucb(mean, sd, acq.ucb_kappa, "max")
            return total / len(self.models)

        return fn

    @property
    def backend_summary(self) -> str:
        kinds = sorted(set(self.backends))
        return "+".join(kinds)


def _standardize(obs: ObservationSet):
    mu = float(np.mean(obs.f))
    sd = float(np.std(obs.f))
    sd = sd if sd > 0 else 1.0
    return ObservationSet(obs.X, (obs.f - mu) / sd,
                          None if obs.grad is None else obs.grad / sd,
                          None if obs.hess is None else obs.hess / sd,
                          obs.noise_var), mu, sd


def run_bo(objective: Objective, cfg: BoConfig, rng=None,
           callback: Callable[[BoRecord], None] | None = None) -> BoTrace:
    """Sequential BO of ``objective`` at ``cfg.level`` derivative information."""
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    bounds = objective.bounds if cfg.bounds is None else cfg.bounds
    d = objective.dim
    sign = -1.0 if objective.direction == "min" else 1.0
    level = cfg.level
    span = float(np.max(bounds[:, 1] - bounds[:, 0]))
    trace = BoTrace(objective.name, level, cfg.seed)
    obs = ObservationSet.empty(d, level, cfg.noise_var)
    best_val, best_x = -np.inf, None
    last_sample = None
    step = cfg.mcmc.step
    t_start = time.perf_counter()

    def observe(x, phase, extra):
        nonlocal obs, best_val, best_x
        f, g, H = objective.evaluate(x, level)
        obs = obs.append(x, sign * f,
                         None if g is None else sign * g,
                         None if H is None else sign * vech(H))
        if sign * f > best_val:
            best_val, best_x = sign * f, np.array(x, dtype=float)
        rec = BoRecord(len(trace.records), phase, np.array(x, dtype=float), f,
                       g, H, sign * best_val, best_x.copy(),
                       objective.distance_to_optimum(best_x),
                       time.perf_counter() - t_start, **{"backend": "none", **extra})
        trace.records.append(rec)
        if callback is not None:
            callback(rec)

    lo, width = bounds[:, 0], bounds[:, 1] - bounds[:, 0]
    for _ in range(cfg.n_init):
        observe(lo + width * rng.uniform(size=d), "init", {})

    def reached():
        if cfg.stop_within is None or objective.optimum_value is None:
            return False
        return abs(trace.records[-1].best_value - objective.optimum_value) <= cfg.stop_within

    while len(trace.records) < cfg.budget and not reached():
        it = len(trace.records)
        std_obs, mu, sd = _standardize(obs)
        prior = HyperPriorSpec.default(bounds, std_obs.f)
        burn = cfg.mcmc.burn_in if last_sample is None else cfg.warm_burn_in
        mcfg = replace(cfg.mcmc, burn_in=burn, step=step, adapt=True, strict=False,
                       seed=int(rng.integers(2 ** 31)))
        try:
            chain = sample_hypers(std_obs, prior, mcfg, cfg.family, rescaled_evidence,
                                  init=last_sample, noise_var=cfg.noise_var)
            last_sample, step = chain.last, chain.step
            surrogate = Surrogate(std_obs, chain.samples, cfg, span)
            acq = surrogate.acquisition(float(np.max(std_obs.f)))
            x_next = maximize_acquisition(acq, bounds, cfg.inner, rng)
        except FactorizationFailed as err:
            trace.failed = True
            trace.message = f"iteration {it}: {err}"
            log.error("BO aborted: %s", err)
            break
        extra = dict(rho_mean=float(np.mean(chain.rho())),
                     delta_mean=float(np.mean([s.delta for s in chain.samples])),
                     acceptance_rate=chain.acceptance_rate,
                     backend=surrogate.backend_summary)
        observe(x_next, "bo", extra)
    return trace

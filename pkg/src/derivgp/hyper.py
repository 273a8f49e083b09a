"""MCMC over kernel hyperparameters (rho, delta) with Gamma hyperpriors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .dual import (FactorizationFailed, ObservationSet, log_marginal_likelihood,
                   log_marginal_likelihood_rescaled)
from .kernels import Family, KernelSpec, NoiseSpec


class AllProposalsRejected(RuntimeError):
    """No proposal was accepted after burn-in; the step size is pathological."""


@dataclass(frozen=True)
class GammaPrior:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Gamma shape and rate must be positive")

    @classmethod
    def with_mean(cls, mean: float, shape: float = 2.0) -> "GammaPrior":
        return cls(shape, shape / mean)

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def var(self) -> float:
        return self.shape / self.rate ** 2

    def logpdf(self, x: float) -> float:
        if not x > 0:
            return -math.inf
        a, b = self.shape, self.rate
        return a * math.log(b) - special.gammaln(a) + (a - 1) * math.log(x) - b * x


@dataclass(frozen=True)
class HyperPriorSpec:
    """Gamma priors on the marginal variance rho and on delta**2."""

    rho: GammaPrior
    delta2: GammaPrior

    @classmethod
    def default(cls, bounds, f=None, shape: float = 2.0) -> "HyperPriorSpec":
        """Prior mean of delta at a quarter of the box diagonal; rho at var(f), floor 1."""
        bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
        diag = float(np.linalg.norm(bounds[:, 1] - bounds[:, 0]))
        rho_mean = 1.0 if f is None or len(f) < 2 else max(float(np.var(f)), 1.0)
        return cls(GammaPrior.with_mean(rho_mean, shape),
                   GammaPrior.with_mean((diag / 4.0) ** 2, shape))


@dataclass(frozen=True)
class HyperSample:
    rho: float
    delta: float
    noise_var: float
    log_post: float
    chain: int = 0
    iteration: int = 0

    @property
    def delta2(self) -> float:
        return self.delta ** 2

    def kernel(self, family: Family, dim: int) -> KernelSpec:
        return KernelSpec(family, self.rho, self.delta, dim)


@dataclass(frozen=True)
class McmcConfig:
    n_samples: int = 50
    burn_in: int = 500
    thinning: int = 5
    step: tuple[float, float] = (0.25, 0.25)
    seed: int = 0
    adapt: bool = False       # tune step during burn-in toward ~30% acceptance
    strict: bool = True       # raise AllProposalsRejected on a frozen chain

    def __post_init__(self):
        if self.n_samples < 1 or self.burn_in < 0 or self.thinning < 1:
            raise ValueError("need n_samples >= 1, burn_in >= 0, thinning >= 1")
        step = self.step
        if np.isscalar(step):
            step = (float(step), float(step))
        step = tuple(float(s) for s in step)
        if len(step) != 2 or any(not s > 0 for s in step):
            raise ValueError("step must be two positive log-domain widths")
        object.__setattr__(self, "step", step)


@dataclass
class McmcResult:
    samples: list[HyperSample]
    acceptance_rate: float
    last: HyperSample
    n_evaluations: int = 0
    failures: int = 0
    step: tuple[float, float] | None = None

    def delta2(self) -> np.ndarray:
        return np.array([s.delta2 for s in self.samples])

    def rho(self) -> np.ndarray:
        return np.array([s.rho for s in self.samples])


Evidence = Callable[[KernelSpec, ObservationSet], float]


def rescaled_evidence(spec: KernelSpec, obs: ObservationSet) -> float:
    return log_marginal_likelihood_rescaled(spec, obs)


def plain_evidence(spec: KernelSpec, obs: ObservationSet) -> float:
    return log_marginal_likelihood(spec, obs, NoiseSpec(obs.noise_var))


def log_hyper_posterior(obs: ObservationSet | None, theta, prior: HyperPriorSpec,
                        family: Family = Family.SE, evidence: Evidence | None = rescaled_evidence
                        ) -> float:
    """Unnormalized log posterior density of (rho, delta**2).

    ``evidence=None`` (or ``obs=None``) leaves only the Gamma prior.
    Factorization failures map to -inf.
    """
    rho, delta = (theta.rho, theta.delta) if isinstance(theta, HyperSample) else theta
    if not (rho > 0 and delta > 0):
        return -math.inf
    lp = prior.rho.logpdf(rho) + prior.delta2.logpdf(delta * delta)
    if obs is None or evidence is None or obs.n == 0 or not np.isfinite(lp):
        return lp
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            ll = evidence(KernelSpec(family, rho, delta, obs.dim), obs)
    except (FactorizationFailed, ValueError, OverflowError):
        return -math.inf
    return lp + ll if np.isfinite(ll) else -math.inf


def _log_target(obs, z, prior, family, evidence):
    rho, delta = math.exp(z[0]), math.exp(z[1])
    lp = log_hyper_posterior(obs, (rho, delta), prior, family, evidence)
    # change of variables (rho, delta^2) -> (log rho, log delta): |J| = 2 rho delta^2
    return lp, lp + z[0] + 2.0 * z[1] + math.log(2.0)


def sample_hypers(obs: ObservationSet | None, prior: HyperPriorSpec, cfg: McmcConfig,
                  family: Family = Family.SE, evidence: Evidence | None = rescaled_evidence,
                  init: HyperSample | Sequence[float] | None = None,
                  noise_var: float | None = None, chain: int = 0) -> McmcResult:
    """Random-walk Metropolis in (log rho, log delta).

    Returns ``cfg.n_samples`` states taken every ``cfg.thinning`` steps after
    ``cfg.burn_in`` steps.  Deterministic for a given ``cfg.seed``.
    """
    rng = np.random.default_rng(cfg.seed)
    if noise_var is None:
        noise_var = 0.0 if obs is None else obs.noise_var
    if init is None:
        init = (prior.rho.mean, math.sqrt(prior.delta2.mean))
    elif isinstance(init, HyperSample):
        init = (init.rho, init.delta)
    z = np.log(np.asarray(init, dtype=float))
    lp, lt = _log_target(obs, z, prior, family, evidence)
    if not np.isfinite(lt):
        # fall back to the prior mean when the warm start is infeasible
        z = np.log([prior.rho.mean, math.sqrt(prior.delta2.mean)])
        lp, lt = _log_target(obs, z, prior, family, evidence)
    step = np.asarray(cfg.step)
    total = cfg.burn_in + cfg.n_samples * cfg.thinning
    samples, accepted, failures = [], 0, 0
    for it in range(total):
        z_new = z + step * rng.standard_normal(2)
        lp_new, lt_new = _log_target(obs, z_new, prior, family, evidence)
        failures += not np.isfinite(lp_new)
        ok = math.log(rng.uniform()) < lt_new - lt
        if ok:
            z, lp, lt = z_new, lp_new, lt_new
            if it >= cfg.burn_in:
                accepted += 1
        if cfg.adapt and it < cfg.burn_in:
            # Robbins-Monro on log step; frozen once sampling starts
            step = np.clip(step * math.exp((float(ok) - 0.3) / math.sqrt(it + 1.0)), 1e-3, 3.0)
        if it >= cfg.burn_in and (it - cfg.burn_in + 1) % cfg.thinning == 0:
            samples.append(HyperSample(math.exp(z[0]), math.exp(z[1]), noise_var, lp, chain, it))
    n_post = total - cfg.burn_in
    rate = accepted / n_post if n_post else 0.0
    if cfg.strict and n_post and accepted == 0:
        raise AllProposalsRejected(
            f"no proposal accepted in {n_post} post-burn-in steps (step={cfg.step})")
    return McmcResult(samples, rate, samples[-1], total, failures, tuple(float(v) for v in step))


def marginalized(fn: Callable, samples: Sequence[HyperSample], xs) -> np.ndarray:
    """Average of ``fn(sample, xs)`` over hyperparameter samples."""
    if len(samples) == 0:
        raise ValueError("need at least one hyperparameter sample")
    total = None
    for s in samples:
        v = np.asarray(fn(s, xs), dtype=float)
        total = v.copy() if total is None else total + v
    return total / len(samples)

"""Bayesian quadrature on the spectral GP.

For a Gaussian density p = N(m, S) the integral Z = int f(x) p(x) dx of
f(x) = B(x)^T a is linear in the coefficients: Z = Z_B^T a with Z_B the
integrals of the real features against p.  Posterior moments of Z follow
from those of a.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.linalg import solve_triangular

from .kernels import DerivOrder, Family, KernelSpec, orders_up_to, vech
from .objectives import Objective
from .spectral import (TWO_PI, FrequencyGrid, SpectralModel, basis_matrix, build_grid,
                       spectral_model, spectral_update)


@dataclass(frozen=True)
class GaussianPriorDensity:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        S = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if S.shape != (len(m), len(m)):
            raise ValueError("covariance shape does not match the mean")
        if not np.allclose(S, S.T) or np.linalg.eigvalsh(S)[0] <= 0:
            raise ValueError("covariance must be symmetric positive definite")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", S)

    @property
    def dim(self) -> int:
        return len(self.mean)

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        L = np.linalg.cholesky(self.cov)
        z = solve_triangular(L, (x - self.mean).T, lower=True)
        logdet = 2 * np.sum(np.log(np.diag(L)))
        return np.exp(-0.5 * np.sum(z * z, axis=0) - 0.5 * logdet
                      - 0.5 * self.dim * math.log(2 * math.pi))

    def sample(self, n: int, rng) -> np.ndarray:
        return np.random.default_rng(rng).multivariate_normal(self.mean, self.cov, size=n)


def basis_integral(grid: FrequencyGrid, prior: GaussianPriorDensity) -> np.ndarray:
    """Integrals of the real features [1, cos, sin] against ``prior``.

    Uses E exp(2 pi i w.x) = exp(2 pi i w.m - 2 pi^2 w.S w).
    """
    if grid.dim != prior.dim:
        raise ValueError("grid and prior dimensions differ")
    half = grid.half_frequencies()
    damp = np.exp(-2 * math.pi ** 2 * np.einsum("ki,ij,kj->k", half, prior.cov, half))
    phase = TWO_PI * half @ prior.mean
    zc, zs = damp * np.cos(phase), damp * np.sin(phase)
    return np.concatenate([zc[:1], zc[1:], zs[1:]])


@dataclass(frozen=True)
class QuadratureState:
    model: SpectralModel
    z_basis: np.ndarray
    prior: GaussianPriorDensity
    X: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    history: tuple = ()       # (E, V, |E - Z_true|) per step


def integral_moments(state: QuadratureState) -> tuple[float, float]:
    """Posterior mean Z_B^T a~ and variance Z_B^T Sigma~ Z_B of the integral."""
    model = state.model
    E = float(state.z_basis @ model.posterior_mean)
    u = model.whitened_solve(state.z_basis[:, None])[:, 0]
    return E, max(float(u @ u), 0.0)


def _candidate_blocks(model: SpectralModel, candidates, level: DerivOrder) -> np.ndarray:
    """Whitened feature blocks L^-1 S b(x) per candidate; shape (n, M, r)."""
    candidates = np.asarray(candidates, dtype=float).reshape(-1, model.grid.dim)
    n = len(candidates)
    cols = []
    for o in orders_up_to(level):
        B = basis_matrix(model.grid, candidates, (o,))
        cols.append(B.reshape(B.shape[0], n, -1))
    B = np.concatenate(cols, axis=2)
    M, _, r = B.shape
    W = model.whitened_solve(B.reshape(M, n * r))
    return W.reshape(M, n, r).transpose(1, 0, 2)


def lookahead_variance(state: QuadratureState, candidates,
                       level: DerivOrder = DerivOrder.VALUE) -> np.ndarray:
    """Integral variance after hypothetically observing each candidate.

    Woodbury on the whitened precision: with u = L^-1 S Z_B and W the
    whitened candidate features, V' = u.u - u^T W (s2 I + W^T W)^-1 W^T u.
    The unseen observed values do not enter.
    """
    model = state.model
    u = model.whitened_solve(state.z_basis[:, None])[:, 0]
    W = _candidate_blocks(model, candidates, level)
    r = W.shape[2]
    G = np.einsum("nmi,nmj->nij", W, W) + model.noise_var * np.eye(r)
    Wu = np.einsum("nmi,m->ni", W, u)
    sol = np.linalg.solve(G, Wu[..., None])[..., 0]
    return np.maximum(u @ u - np.sum(Wu * sol, axis=1), 0.0)


def select_next_variance(state: QuadratureState, candidates,
                         level: DerivOrder = DerivOrder.VALUE):
    """Candidate minimizing the look-ahead integral variance; ties to the lowest index."""
    candidates = np.asarray(candidates, dtype=float).reshape(-1, state.prior.dim)
    v = lookahead_variance(state, candidates, level)
    return candidates[int(np.argmin(v))]


def integrand_score(state: QuadratureState, candidates) -> np.ndarray:
    """Posterior variance of f(x) p(x), i.e. var f(x) * p(x)^2."""
    candidates = np.asarray(candidates, dtype=float).reshape(-1, state.prior.dim)
    B = basis_matrix(state.model.grid, candidates)
    v = state.model.whitened_solve(B)
    return np.sum(v * v, axis=0) * state.prior.pdf(candidates) ** 2


def select_next_integrand(state: QuadratureState, candidates):
    """Candidate maximizing var f(x) p(x)^2; ties to the lowest index."""
    candidates = np.asarray(candidates, dtype=float).reshape(-1, state.prior.dim)
    return candidates[int(np.argmax(integrand_score(state, candidates)))]


def stratified_candidates(prior: GaussianPriorDensity, n: int, width: float, rng) -> np.ndarray:
    """Stratified uniform sample in the box m +- width * sd.

    In one dimension each of ``n`` equal strata gets one point; in higher
    dimensions every coordinate is stratified independently (Latin hypercube).
    """
    rng = np.random.default_rng(rng)
    d = prior.dim
    u = np.empty((n, d))
    for j in range(d):
        u[:, j] = (rng.permutation(n) + rng.uniform(size=n)) / n
    if d == 1:
        u = np.sort(u, axis=0)
    return prior.mean + (2 * u - 1) * width * prior.sd


class SelectionRule(str, enum.Enum):
    INTEGRAND = "integrand"
    VARIANCE = "variance"


@dataclass(frozen=True)
class BqConfig:
    kernel: KernelSpec = KernelSpec(Family.SE, 1.0, 0.5, 1)
    level: DerivOrder = DerivOrder.HESSIAN
    budget: int = 20
    n_candidates: int = 256
    candidate_width: float = 4.0
    rule: SelectionRule = SelectionRule.INTEGRAND
    noise_var: float = 1e-6
    grid_t: float = 8.0
    cond_target: float = 1e14
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "level", DerivOrder(self.level))
        object.__setattr__(self, "rule", SelectionRule(self.rule))
        if self.budget < 0 or self.n_candidates < 1:
            raise ValueError("need budget >= 0 and n_candidates >= 1")


@dataclass(frozen=True)
class BqProblem:
    """Integrand with derivatives, a Gaussian density and the reference integral."""

    objective: Objective
    prior: GaussianPriorDensity
    z_true: float


def gaussian_bump(mu: float, ell: float, amp: float = 1.0):
    """f(x) = amp exp(-(x - mu)^2 / (2 ell^2)) in 1D with derivatives."""
    def fn(x):
        x = float(np.asarray(x).reshape(-1)[0])
        r = (x - mu) / ell
        f = amp * math.exp(-0.5 * r * r)
        return f, np.array([-r / ell * f]), np.array([[(r * r - 1) / ell ** 2 * f]])
    return fn


def gaussian_bump_problem(mu: float = 0.5, ell: float = 0.6, amp: float = 1.0,
                          prior_mean: float = 0.0, prior_var: float = 1.0) -> BqProblem:
    """Gaussian-bump likelihood times a Gaussian prior; the integral is closed form."""
    s2 = ell ** 2 + prior_var
    z = amp * ell / math.sqrt(s2) * math.exp(-0.5 * (mu - prior_mean) ** 2 / s2)
    lo, hi = prior_mean - 6 * math.sqrt(prior_var), prior_mean + 6 * math.sqrt(prior_var)
    obj = Objective("gaussian_bump", 1, [[lo, hi]], gaussian_bump(mu, ell, amp),
                    np.array([[mu]]), amp, direction="max")
    return BqProblem(obj, GaussianPriorDensity([prior_mean], [[prior_var]]), z)


def quadrature_reference(objective: Objective, prior: GaussianPriorDensity,
                         tol: float = 1e-6) -> float:
    """Adaptive-quadrature value of int f p over +-10 prior sd (1D or 2D)."""
    lo = prior.mean - 10 * prior.sd
    hi = prior.mean + 10 * prior.sd
    if prior.dim == 1:
        val, _ = integrate.quad(lambda t: objective([t])[0] * prior.pdf([t])[0],
                                lo[0], hi[0], epsabs=tol, epsrel=tol, limit=200)
        return float(val)
    if prior.dim == 2:
        val, _ = integrate.dblquad(lambda y, x: objective([x, y])[0] * prior.pdf([x, y])[0],
                                   lo[0], hi[0], lo[1], hi[1], epsabs=tol, epsrel=tol)
        return float(val)
    raise ValueError("reference quadrature covers 1D and 2D only")


def initial_state(problem: BqProblem, cfg: BqConfig) -> QuadratureState:
    prior = problem.prior
    spec = cfg.kernel if cfg.kernel.dim == prior.dim else cfg.kernel.replace(dim=prior.dim)
    span = float(2 * cfg.candidate_width * np.max(prior.sd))
    grid = build_grid(span, spec, cfg.grid_t, cfg.cond_target)
    model = spectral_model(spec, grid, cfg.noise_var)
    state = QuadratureState(model, basis_integral(grid, prior), prior, np.zeros((0, prior.dim)))
    E, V = integral_moments(state)
    return QuadratureState(model, state.z_basis, prior, state.X,
                           ((E, V, abs(E - problem.z_true)),))


def observe(state: QuadratureState, problem: BqProblem, x, level: DerivOrder,
            z_true: float | None = None) -> QuadratureState:
    """Evaluate the integrand at ``x`` and condition the spectral model."""
    x = np.asarray(x, dtype=float).reshape(1, state.prior.dim)
    f, g, H = problem.objective.evaluate(x[0], level)
    model = spectral_update(state.model, x, [f],
                            None if g is None else g[None],
                            None if H is None else vech(H)[None])
    nxt = QuadratureState(model, state.z_basis, state.prior, np.vstack([state.X, x]),
                          state.history)
    E, V = integral_moments(nxt)
    z = problem.z_true if z_true is None else z_true
    return QuadratureState(model, nxt.z_basis, nxt.prior, nxt.X,
                           state.history + ((E, V, abs(E - z)),))


def run_bq(problem: BqProblem, cfg: BqConfig, rng=None) -> QuadratureState:
    """Active BQ loop; ``history`` holds (E, V, error) for the prior and each step."""
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    state = initial_state(problem, cfg)
    for _ in range(cfg.budget):
        cand = stratified_candidates(problem.prior, cfg.n_candidates, cfg.candidate_width, rng)
        if cfg.rule is SelectionRule.INTEGRAND:
            x = select_next_integrand(state, cand)
        else:
            x = select_next_variance(state, cand, cfg.level)
        state = observe(state, problem, x, cfg.level)
    return state


"""Exact GP posterior over values, gradients and Hessians (kernel-matrix form)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .kernels import (DerivOrder, KernelSpec, NoiseSpec, build_joint_gram, cross_cov,
                      orders_up_to)

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class FactorizationFailed(np.linalg.LinAlgError):
    """The joint Gram matrix could not be Cholesky factorized."""


@dataclass(frozen=True)
class ObservationSet:
    """Evaluation locations with values and optional gradients / vech'd Hessians.

    ``grad`` has shape (N, d) and ``hess`` shape (N, d(d+1)/2).  Hessians
    always come with gradients.
    """

    X: np.ndarray
    f: np.ndarray
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None
    noise_var: float = 0.0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        f = np.asarray(self.f, dtype=float).reshape(-1)
        n, d = X.shape
        if f.shape != (n,):
            raise ValueError(f"f has {f.size} entries for {n} points")
        grad, hess = self.grad, self.hess
        if hess is not None and grad is None:
            raise ValueError("Hessian observations require gradient observations")
        if grad is not None:
            grad = np.asarray(grad, dtype=float).reshape(n, d)
        if hess is not None:
            hess = np.asarray(hess, dtype=float).reshape(n, d * (d + 1) // 2)
        for name, arr in (("X", X), ("f", f), ("grad", grad), ("hess", hess)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        if not self.noise_var >= 0:
            raise ValueError("noise_var must be nonnegative")
        for name, arr in (("X", X), ("f", f), ("grad", grad), ("hess", hess)):
            if arr is not None:
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, dim: int, level: DerivOrder = DerivOrder.VALUE, noise_var: float = 0.0):
        h = dim * (dim + 1) // 2
        grad = np.zeros((0, dim)) if level >= DerivOrder.GRADIENT else None
        hess = np.zeros((0, h)) if level >= DerivOrder.HESSIAN else None
        return cls(np.zeros((0, dim)), np.zeros(0), grad, hess, noise_var)

    @property
    def n(self) -> int:
        return len(self.f)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def level(self) -> DerivOrder:
        if self.hess is not None:
            return DerivOrder.HESSIAN
        if self.grad is not None:
            return DerivOrder.GRADIENT
        return DerivOrder.VALUE

    @property
    def orders(self) -> tuple[DerivOrder, ...]:
        return orders_up_to(self.level)

    def stacked(self) -> np.ndarray:
        """Observation vector in the order-major Gram layout."""
        parts = [self.f]
        if self.grad is not None:
            parts.append(self.grad.reshape(-1))
        if self.hess is not None:
            parts.append(self.hess.reshape(-1))
        return np.concatenate(parts)

    def append(self, x, f, grad=None, hess=None) -> "ObservationSet":
        x = np.asarray(x, dtype=float).reshape(1, self.dim)
        new_grad = None if self.grad is None else np.vstack([self.grad, np.reshape(grad, (1, -1))])
        new_hess = None if self.hess is None else np.vstack([self.hess, np.reshape(hess, (1, -1))])
        return ObservationSet(np.vstack([self.X, x]), np.append(self.f, f),
                              new_grad, new_hess, self.noise_var)

    def subset(self, idx) -> "ObservationSet":
        idx = np.asarray(idx)
        return ObservationSet(
            self.X[idx], self.f[idx],
            None if self.grad is None else self.grad[idx],
            None if self.hess is None else self.hess[idx],
            self.noise_var)

    def truncate(self, level: DerivOrder) -> "ObservationSet":
        """Drop derivative observations above ``level``."""
        level = DerivOrder(level)
        return ObservationSet(
            self.X, self.f,
            self.grad if level >= DerivOrder.GRADIENT else None,
            self.hess if level >= DerivOrder.HESSIAN else None,
            self.noise_var)


def robust_cholesky(K: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retrying once with jitter 1e-10 * trace / N."""
    if not np.all(np.isfinite(K)):
        raise FactorizationFailed("Gram matrix has non-finite entries")
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10 * np.trace(K) / len(K)
    log.debug("cholesky retry with jitter %.3g", jitter)
    try:
        return np.linalg.cholesky(K + jitter * np.eye(len(K)))
    except np.linalg.LinAlgError as err:
        raise FactorizationFailed(
            f"Cholesky failed after jitter {jitter:.3g}; rescale inputs or use "
            "the spectral representation") from err


@dataclass(frozen=True)
class DualPosterior:
    """Fitted posterior.  ``input_scale`` divides prediction inputs (rescaled fits)."""

    spec: KernelSpec
    obs: ObservationSet
    noise: NoiseSpec
    gram: np.ndarray | None
    chol: np.ndarray | None
    weights: np.ndarray
    input_scale: float = 1.0

    def cross(self, xs) -> np.ndarray:
        """Covariance between f(xs) and the stacked observations; (m, M)."""
        xs = np.asarray(xs, dtype=float).reshape(-1, self.spec.dim) / self.input_scale
        if self.obs.n == 0:
            return np.zeros((len(xs), 0))
        return cross_cov(self.spec, xs, self.obs.X, (DerivOrder.VALUE,), self.obs.orders)

    def predict(self, xs) -> tuple[np.ndarray, np.ndarray]:
        return predict(self, xs)


def fit(spec: KernelSpec, obs: ObservationSet, noise: NoiseSpec | None = None) -> DualPosterior:
    """Factor the joint Gram matrix of ``obs`` for repeated prediction.

    Raises
    ------
    FactorizationFailed
        If the Gram matrix is not numerically positive definite even after
        one jitter retry.
    """
    if obs.dim != spec.dim:
        raise ValueError(f"observations have dim {obs.dim}, kernel has {spec.dim}")
    if noise is None:
        noise = NoiseSpec(obs.noise_var)
    if obs.n == 0:
        return DualPosterior(spec, obs, noise, None, None, np.zeros(0))
    K = build_joint_gram(spec, obs.X, obs.orders, noise)
    L = robust_cholesky(K)
    weights = cho_solve((L, True), obs.stacked())
    return DualPosterior(spec, obs, noise, K, L, weights)


def predict(post: DualPosterior, xs) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of f at ``xs``; variances clamped at 0."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1 and post.spec.dim > 1:
        xs = xs[None]
    xs = xs.reshape(-1, post.spec.dim) if xs.size else xs.reshape(0, post.spec.dim)
    prior_var = np.full(len(xs), post.spec.rho)
    if post.obs.n == 0:
        return np.zeros(len(xs)), prior_var
    kx = post.cross(xs)
    mean = kx @ post.weights
    v = solve_triangular(post.chol, kx.T, lower=True)
    var = prior_var - np.sum(v * v, axis=0)
    if np.any(var < -1e-10 * post.spec.rho):
        log.warning("negative predictive variance %.3g clamped to zero", var.min())
    return mean, np.maximum(var, 0.0)


def rescale(spec: KernelSpec, obs: ObservationSet):
    """Absorb the length scale into the inputs: x -> x / delta.

    Gradients scale by delta and Hessians by delta**2; values are
    unchanged.  Returns the unit-length-scale kernel, transformed
    observations and uniform noise in the rescaled coordinates.
    """
    s = spec.delta
    new_spec = spec.replace(delta=1.0)
    new_obs = ObservationSet(
        obs.X / s, obs.f,
        None if obs.grad is None else obs.grad * s,
        None if obs.hess is None else obs.hess * s * s,
        obs.noise_var)
    return new_spec, new_obs, NoiseSpec(obs.noise_var)


def fit_rescaled(spec: KernelSpec, obs: ObservationSet) -> DualPosterior:
    """Fit in rescaled coordinates; the result predicts at original inputs."""
    new_spec, new_obs, noise = rescale(spec, obs)
    post = fit(new_spec, new_obs, noise)
    return DualPosterior(post.spec, post.obs, post.noise, post.gram, post.chol,
                         post.weights, input_scale=spec.delta)


def condition_number(matrix) -> float:
    """Ratio of extreme singular values; the smallest is floored at eps * largest."""
    s = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    if s[0] == 0:
        return np.inf
    return float(s[0] / max(s[-1], np.finfo(float).eps * s[0]))


def log_marginal_likelihood(spec: KernelSpec, obs: ObservationSet,
                            noise: NoiseSpec | None = None) -> float:
    """log N(stacked observations; 0, K + noise)."""
    if noise is None:
        noise = NoiseSpec(obs.noise_var)
    if obs.n == 0:
        return 0.0
    K = build_joint_gram(spec, obs.X, obs.orders, noise)
    L = robust_cholesky(K)
    y = obs.stacked()
    a = solve_triangular(L, y, lower=True)
    return float(-0.5 * (a @ a) - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * LOG_2PI)


def log_marginal_likelihood_rescaled(spec: KernelSpec, obs: ObservationSet) -> float:
    """Evidence computed after rescaling, expressed as a density of the original data.

    The linear map y -> y' contributes log|det| = (#grad + 2 #hess) log delta.
    Equal to ``log_marginal_likelihood`` with ``NoiseSpec.rescaled`` noise.
    """
    new_spec, new_obs, noise = rescale(spec, obs)
    lml = log_marginal_likelihood(new_spec, new_obs, noise)
    n_grad = 0 if obs.grad is None else obs.grad.size
    n_hess = 0 if obs.hess is None else obs.hess.size
    return lml + (n_grad + 2 * n_hess) * np.log(spec.delta)

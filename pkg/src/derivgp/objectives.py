"""Benchmark objectives with analytic gradients and Hessians."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize
from scipy.linalg import cho_factor, cho_solve

from .kernels import DerivOrder

BRANIN_B = 5.1 / (4 * np.pi ** 2)
BRANIN_C = 5.0 / np.pi
BRANIN_S = 10.0 * (1.0 - 1.0 / (8.0 * np.pi))


@dataclass(frozen=True)
class Objective:
    """A test function on a box.

    ``fn(x)`` returns ``(value, gradient, hessian)``; the gradient and
    Hessian may be None when the function does not provide them.
    """

    name: str
    dim: int
    bounds: np.ndarray
    fn: Callable = field(repr=False)
    optimum_x: np.ndarray | None = None
    optimum_value: float | None = None
    direction: str = "min"
    max_level: DerivOrder = DerivOrder.HESSIAN

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float).reshape(self.dim, 2)
        if np.any(b[:, 0] >= b[:, 1]):
            raise ValueError("each bound needs lo < hi")
        object.__setattr__(self, "bounds", b)
        if self.direction not in ("min", "max"):
            raise ValueError("direction must be 'min' or 'max'")

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float).reshape(self.dim))

    def evaluate(self, x, level: DerivOrder = DerivOrder.HESSIAN):
        level = DerivOrder(level)
        if level > self.max_level:
            raise ValueError(f"{self.name} does not provide {level.name} observations")
        f, g, h = self(x)
        return (float(f),
                None if level < DerivOrder.GRADIENT else np.asarray(g, dtype=float),
                None if level < DerivOrder.HESSIAN else np.asarray(h, dtype=float))

    def distance_to_optimum(self, x) -> float:
        if self.optimum_x is None:
            return float("nan")
        opt = np.atleast_2d(self.optimum_x)
        return float(np.min(np.linalg.norm(opt - np.asarray(x), axis=1)))


def rosenbrock(x):
    x = np.asarray(x, dtype=float)
    d = len(x)
    if d < 2:
        raise ValueError("Rosenbrock needs d >= 2")
    a, b = x[:-1], x[1:]
    r = b - a * a
    f = np.sum(100.0 * r * r + (a - 1.0) ** 2)
    g = np.zeros(d)
    g[:-1] += -400.0 * a * r + 2.0 * (a - 1.0)
    g[1:] += 200.0 * r
    H = np.zeros((d, d))
    idx = np.arange(d - 1)
    H[idx, idx] += 1200.0 * a * a - 400.0 * b + 2.0
    H[idx + 1, idx + 1] += 200.0
    H[idx, idx + 1] = -400.0 * a
    H[idx + 1, idx] = -400.0 * a
    return f, g, H


def branin(x):
    x1, x2 = np.asarray(x, dtype=float)
    da = -2.0 * BRANIN_B * x1 + BRANIN_C
    a = x2 - BRANIN_B * x1 * x1 + BRANIN_C * x1 - 6.0
    f = a * a + BRANIN_S * np.cos(x1) + 10.0
    g = np.array([2.0 * a * da - BRANIN_S * np.sin(x1), 2.0 * a])
    h12 = 2.0 * da
    H = np.array([[2.0 * da * da - 4.0 * BRANIN_B * a - BRANIN_S * np.cos(x1), h12],
                  [h12, 2.0]])
    return f, g, H


_SHUBERT_I = np.arange(1, 6, dtype=float)


def _shubert_axis(t):
    arg = (_SHUBERT_I + 1.0) * t + _SHUBERT_I
    g0 = np.sum(_SHUBERT_I * np.cos(arg))
    g1 = -np.sum(_SHUBERT_I * (_SHUBERT_I + 1.0) * np.sin(arg))
    g2 = -np.sum(_SHUBERT_I * (_SHUBERT_I + 1.0) ** 2 * np.cos(arg))
    return g0, g1, g2


def shubert(x):
    x1, x2 = np.asarray(x, dtype=float)
    a0, a1, a2 = _shubert_axis(x1)
    b0, b1, b2 = _shubert_axis(x2)
    f = a0 * b0
    g = np.array([a1 * b0, a0 * b1])
    H = np.array([[a2 * b0, a1 * b1], [a1 * b1, a0 * b2]])
    return f, g, H


# 1D slice of the modified Branin: u in [-1, 1] -> x1 in [-5, 10], x2 fixed
FORRESTER_SLICE_U2 = -0.5
_F_X1_SCALE = 7.5
_F_X2 = 7.5 * (FORRESTER_SLICE_U2 + 1.0)


def forrester_branin_1d(u):
    """Modified Branin (Branin + 5 x1) along x2 = 3.75, inputs scaled to [-1, 1]."""
    u = float(np.asarray(u, dtype=float).reshape(-1)[0])
    x1 = -5.0 + _F_X1_SCALE * (u + 1.0)
    f, g, H = branin([x1, _F_X2])
    f = f + 5.0 * x1
    df = _F_X1_SCALE * (g[0] + 5.0)
    d2f = _F_X1_SCALE ** 2 * H[0, 0]
    return f, np.array([df]), np.array([[d2f]])


def _forrester_minimum():
    u = np.linspace(-1, 1, 2001)
    vals = np.array([forrester_branin_1d(v)[0] for v in u])
    k = int(np.argmin(vals))
    res = optimize.minimize_scalar(lambda v: forrester_branin_1d(v)[0],
                                   bracket=(u[max(k - 1, 0)], u[k], u[min(k + 1, 2000)]))
    return float(res.x), float(res.fun)


def _shubert_minima():
    """The 18 global minimizers on [-10, 10]^2.

    f = g(x1) g(x2), so the minimum pairs an argmin of the axis sum g with
    an argmax of g.
    """
    t = np.linspace(-10, 10, 20001)
    g = np.array([_shubert_axis(v)[0] for v in t])
    extremes = []
    for sign in (1.0, -1.0):
        target = (sign * g).min()
        roots: list[float] = []
        for v in t[sign * g < target + 1e-2 * abs(target)]:
            r = optimize.minimize_scalar(lambda s: sign * _shubert_axis(s)[0],
                                         bounds=(max(v - 0.05, -10), min(v + 0.05, 10)),
                                         method="bounded", options={"xatol": 1e-10})
            if all(abs(r.x - q) > 0.1 for q in roots):
                roots.append(float(r.x))
        extremes.append(roots)
    lo, hi = extremes
    pts = [(a, b) for a in lo for b in hi] + [(b, a) for a in lo for b in hi]
    return np.asarray(pts)


_CACHE: dict[str, Objective] = {}


def get_objective(name: str) -> Objective:
    """Benchmark by name: rosenbrock, branin, shubert, forrester1d."""
    if name in _CACHE:
        return _CACHE[name]
    if name == "rosenbrock":
        obj = Objective("rosenbrock", 2, [[-2.0, 2.0], [-2.0, 2.0]], rosenbrock,
                        np.array([[1.0, 1.0]]), 0.0)
    elif name == "branin":
        obj = Objective("branin", 2, [[-5.0, 10.0], [0.0, 15.0]], branin,
                        np.array([[-np.pi, 12.275], [np.pi, 2.275], [9.42478, 2.475]]),
                        10.0 / (8.0 * np.pi))
    elif name == "shubert":
        obj = Objective("shubert", 2, [[-10.0, 10.0], [-10.0, 10.0]], shubert,
                        _shubert_minima(), -186.7309088310239)
    elif name == "forrester1d":
        u_opt, f_opt = _forrester_minimum()
        obj = Objective("forrester1d", 1, [[-1.0, 1.0]], forrester_branin_1d,
                        np.array([[u_opt]]), f_opt)
    else:
        raise KeyError(f"unknown objective {name!r}")
    _CACHE[name] = obj
    return obj


# -- ASD evidence ------------------------------------------------------------


@dataclass(frozen=True)
class AsdData:
    """Linear regression data y = X w + noise with coefficients on a 1D lattice."""

    X: np.ndarray
    y: np.ndarray
    true_theta: tuple[float, float, float]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def save(self, path) -> None:
        np.savez(path, X=self.X, y=self.y, true_theta=np.asarray(self.true_theta))

    @classmethod
    def load(cls, path) -> "AsdData":
        with np.load(path) as z:
            return cls(z["X"], z["y"], tuple(float(v) for v in z["true_theta"]))


def asd_prior_cov(p: int, r: float, l: float) -> np.ndarray:
    """C_ij = exp(-r - (i - j)^2 / (2 l^2)) over lattice indices."""
    idx = np.arange(p, dtype=float)
    delta = (idx[:, None] - idx[None, :]) ** 2
    return np.exp(-r - delta / (2.0 * l * l))


def make_asd_data(n: int = 200, p: int = 40, r: float = 0.0, l: float = 3.0,
                  noise_var: float = 0.5, seed: int = 0) -> AsdData:
    """Draw smooth regression weights from the ASD prior and simulate responses."""
    if n > 500 or p > 100:
        raise ValueError("desk-scale ASD data is limited to n <= 500, p <= 100")
    rng = np.random.default_rng(seed)
    C = asd_prior_cov(p, r, l)
    w = np.linalg.cholesky(C + 1e-10 * np.eye(p)) @ rng.standard_normal(p)
    X = rng.standard_normal((n, p))
    y = X @ w + np.sqrt(noise_var) * rng.standard_normal(n)
    return AsdData(X, y, (r, l, noise_var))


def asd_log_evidence(data: AsdData, theta) -> tuple[float, np.ndarray]:
    """Log evidence of the ASD regression model and its gradient in (r, l, noise_var).

    Returns ``(-inf, nan gradient)`` where the marginal covariance cannot be
    factorized or parameters are out of range.
    """
    r, l, s2 = (float(v) for v in theta)
    bad = (-np.inf, np.full(3, np.nan))
    if not (l > 0 and s2 > 0 and np.isfinite(r)):
        return bad
    p = data.p
    idx = np.arange(p, dtype=float)
    delta = (idx[:, None] - idx[None, :]) ** 2
    C = np.exp(-r - delta / (2.0 * l * l))
    XC = data.X @ C
    K = XC @ data.X.T + s2 * np.eye(data.n)
    try:
        cf = cho_factor(K, lower=True)
    except np.linalg.LinAlgError:
        return bad
    alpha = cho_solve(cf, data.y)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    f = -0.5 * (data.y @ alpha) - 0.5 * logdet - 0.5 * data.n * np.log(2 * np.pi)
    # d f / d theta = 0.5 tr((alpha alpha^T - K^-1) dK)
    Kinv_X = cho_solve(cf, data.X)
    Xa = data.X.T @ alpha
    M = np.outer(Xa, Xa) - data.X.T @ Kinv_X

    def dterm(dC):
        return 0.5 * np.sum(M * dC)

    g_r = dterm(-C)
    g_l = dterm(C * delta / l ** 3)
    g_s2 = 0.5 * (alpha @ alpha - np.trace(cho_solve(cf, np.eye(data.n))))
    return float(f), np.array([g_r, g_l, g_s2])


ASD_BOUNDS = np.array([[-3.0, 3.0], [0.5, 8.0], [0.05, 3.0]])


def asd_objective(data: AsdData, bounds=ASD_BOUNDS) -> Objective:
    """ASD evidence as a maximization objective with gradients only."""
    def fn(theta):
        f, g = asd_log_evidence(data, theta)
        return f, g, None
    return Objective("asd", 3, bounds, fn, None, None, direction="max",
                     max_level=DerivOrder.GRADIENT)

"""Stationary kernels and their derivative cross-covariance blocks.

Every covariance block between (value, gradient, Hessian) observations is
an exact mixed partial derivative of the kernel.  With ``tau = x - x'``,
derivatives with respect to ``x`` are derivatives with respect to ``tau``
and derivatives with respect to ``x'`` pick up a factor of -1 each, so

    cov(D_r f(x), D_c f(x')) = (-1)**|c| * D_{r+c} k(tau).

The SE kernel and the factorizable Matern 5/2 kernel are products of 1D
factors, so a mixed partial is a product of per-axis 1D derivatives.  For
SE those are Gaussian-times-Hermite terms, which covers every order needed
for (Hessian, Hessian) blocks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

SQRT5 = np.sqrt(5.0)


class Family(str, enum.Enum):
    SE = "se"
    MATERN52 = "matern52"
    MATERN52_FACTORIZABLE = "matern52_factorizable"


class DerivOrder(enum.IntEnum):
    VALUE = 0
    GRADIENT = 1
    HESSIAN = 2

    def block_size(self, dim: int) -> int:
        return (1, dim, dim * (dim + 1) // 2)[self]


class UnsupportedOrderError(ValueError):
    """Derivative order not available for the requested kernel family."""


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family with marginal variance ``rho`` and length scale ``delta``."""

    family: Family
    rho: float
    delta: float
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not (np.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise ValueError(f"delta must be positive, got {self.delta}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))

    def replace(self, **changes) -> "KernelSpec":
        fields = dict(family=self.family, rho=self.rho, delta=self.delta, dim=self.dim)
        fields.update(changes)
        return KernelSpec(**fields)

    @property
    def max_order(self) -> DerivOrder:
        if self.family is Family.SE:
            return DerivOrder.HESSIAN
        return DerivOrder.GRADIENT


# -- Hessian vectorization ---------------------------------------------------


def hess_index(dim: int) -> list[tuple[int, int]]:
    """(row, col) pairs of the column-stacked lower triangle.

    For d=2 this is [(0, 0), (1, 0), (1, 1)].
    """
    return [(i, j) for j in range(dim) for i in range(j, dim)]


def vech(mat: np.ndarray) -> np.ndarray:
    """Vectorize symmetric matrices along the last two axes."""
    mat = np.asarray(mat)
    dim = mat.shape[-1]
    rows, cols = zip(*hess_index(dim))
    return mat[..., list(rows), list(cols)]


def unvech(vec: np.ndarray, dim: int | None = None) -> np.ndarray:
    """Inverse of :func:`vech`; the result is exactly symmetric."""
    vec = np.asarray(vec)
    m = vec.shape[-1]
    if dim is None:
        dim = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if dim * (dim + 1) // 2 != m:
        raise ValueError(f"length {m} is not a triangular number")
    out = np.zeros(vec.shape[:-1] + (dim, dim), dtype=vec.dtype)
    for k, (i, j) in enumerate(hess_index(dim)):
        out[..., i, j] = vec[..., k]
        out[..., j, i] = vec[..., k]
    return out


def components(order: DerivOrder, dim: int) -> list[tuple[int, ...]]:
    """Axes differentiated for each entry of an order's block."""
    order = DerivOrder(order)
    if order is DerivOrder.VALUE:
        return [()]
    if order is DerivOrder.GRADIENT:
        return [(a,) for a in range(dim)]
    return [(i, j) for i, j in hess_index(dim)]


def _counts(axes: Iterable[int], dim: int) -> tuple[int, ...]:
    out = [0] * dim
    for a in axes:
        out[a] += 1
    return tuple(out)


def normalize_orders(orders: Iterable[DerivOrder | int]) -> tuple[DerivOrder, ...]:
    orders = tuple(sorted({DerivOrder(o) for o in orders}))
    if not orders:
        raise ValueError("orders must be nonempty")
    return orders


def block_offsets(n: int, dim: int, orders: Sequence[DerivOrder]) -> dict[DerivOrder, int]:
    """Starting row of each order's block in the order-major layout."""
    offsets, start = {}, 0
    for o in normalize_orders(orders):
        offsets[o] = start
        start += n * o.block_size(dim)
    return offsets


def gram_row(n: int, dim: int, orders: Sequence[DerivOrder], obs: int,
             order: DerivOrder, component: int = 0) -> int:
    """Row of (observation, order, component) in the joint Gram matrix."""
    order = DerivOrder(order)
    offsets = block_offsets(n, dim, orders)
    if order not in offsets:
        raise KeyError(f"order {order.name} not in layout")
    size = order.block_size(dim)
    if not 0 <= component < size or not 0 <= obs < n:
        raise IndexError("observation or component out of range")
    return offsets[order] + obs * size + component


def joint_size(n: int, dim: int, orders: Sequence[DerivOrder]) -> int:
    return sum(n * o.block_size(dim) for o in normalize_orders(orders))


# -- 1D factors --------------------------------------------------------------


def _se_factor(t: np.ndarray, delta: float, m: int) -> np.ndarray:
    """m-th derivative of exp(-t^2 / (2 delta^2)).

    Degenerate length scales overflow to inf/nan; callers detect that.
    """
    if m > 4:
        raise UnsupportedOrderError(f"SE derivative of order {m} per axis")
    with np.errstate(over="ignore", invalid="ignore"):
        z = t / delta
        g = np.exp(-0.5 * z * z)
        if m == 0:
            return g
        if m == 1:
            he = z
        elif m == 2:
            he = z * z - 1.0
        elif m == 3:
            he = z * (z * z - 3.0)
        else:
            z2 = z * z
            he = z2 * z2 - 6.0 * z2 + 3.0
        return np.float64(-1.0 / delta) ** m * he * g


def _matern_factor(t: np.ndarray, delta: float, m: int) -> np.ndarray:
    """m-th derivative of the unit-variance 1D Matern 5/2 kernel."""
    u = SQRT5 * np.abs(t) / delta
    e = np.exp(-u)
    if m == 0:
        return (1.0 + u + u * u / 3.0) * e
    a = 5.0 / (3.0 * np.float64(delta) ** 2) * (1.0 + u) * e
    if m == 1:
        return -a * t
    if m == 2:
        return -a + 25.0 / (3.0 * np.float64(delta) ** 4) * e * t * t
    raise UnsupportedOrderError(f"Matern 5/2 derivative of order {m} per axis")


# -- kernel evaluation -------------------------------------------------------


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1) if dim > 1 or x.size == 1 else x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return x


def _as_point(x, dim: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (dim,):
        raise ValueError(f"expected a point of dimension {dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return x


def eval_kernel(spec: KernelSpec, x, x2) -> float:
    x = _as_point(x, spec.dim)
    x2 = _as_point(x2, spec.dim)
    return float(cross_cov(spec, x[None], x2[None])[0, 0])


def _check_orders(spec: KernelSpec, orders: Sequence[DerivOrder]) -> None:
    for o in orders:
        if o > spec.max_order:
            raise UnsupportedOrderError(
                f"{spec.family.value} kernel does not support {o.name} blocks")


def _derivative_tables(spec: KernelSpec, tau: np.ndarray, max_per_axis: int):
    factor = _se_factor if spec.family is Family.SE else _matern_factor
    return [factor(tau, spec.delta, m) for m in range(max_per_axis + 1)]


def _iso_matern_derivative(spec: KernelSpec, tau: np.ndarray, axes: tuple[int, ...]):
    """Derivative of the isotropic Matern 5/2 kernel, total order <= 2."""
    r = np.sqrt(np.sum(tau * tau, axis=-1))
    u = SQRT5 * r / spec.delta
    e = np.exp(-u)
    if len(axes) == 0:
        return spec.rho * (1.0 + u + u * u / 3.0) * e
    a = spec.rho * 5.0 / (3.0 * spec.delta ** 2) * (1.0 + u) * e
    if len(axes) == 1:
        return -a * tau[..., axes[0]]
    if len(axes) == 2:
        i, j = axes
        out = 25.0 * spec.rho / (3.0 * spec.delta ** 4) * e * tau[..., i] * tau[..., j]
        if i == j:
            out = out - a
        return out
    raise UnsupportedOrderError("Matern 5/2 supports at most second derivatives")


def assemble_blocks(dim: int, n1: int, n2: int, row_orders, col_orders,
                    derivative) -> np.ndarray:
    """Lay out covariance blocks in the order-major layout.

    ``derivative(axes)`` returns the (n1, n2) array of the mixed partial of
    k(tau) over the given tau axes; the sign for derivatives taken with
    respect to the second argument is applied here.
    """
    row_blocks = []
    for ro in normalize_orders(row_orders):
        col_blocks = []
        rcomp = components(ro, dim)
        for co in normalize_orders(col_orders):
            ccomp = components(co, dim)
            blk = np.empty((n1, len(rcomp), n2, len(ccomp)))
            sign = -1.0 if co % 2 else 1.0
            for p, ra in enumerate(rcomp):
                for q, ca in enumerate(ccomp):
                    blk[:, p, :, q] = sign * derivative(ra + ca)
            col_blocks.append(blk.reshape(n1 * len(rcomp), n2 * len(ccomp)))
        row_blocks.append(np.hstack(col_blocks))
    return np.vstack(row_blocks)


def product_derivative(rho: float, tables, dim: int):
    """Mixed partial of a product kernel from per-axis derivative tables.

    ``tables[m][..., a]`` holds the m-th derivative of the axis-a factor.
    """
    def derivative(axes):
        cnt = _counts(axes, dim)
        val = rho * tables[cnt[0]][..., 0]
        for a in range(1, dim):
            val = val * tables[cnt[a]][..., a]
        return val
    return derivative


def cross_cov(spec: KernelSpec, X1, X2, row_orders=(DerivOrder.VALUE,),
              col_orders=(DerivOrder.VALUE,)) -> np.ndarray:
    """Covariance between derivative observations at ``X1`` and ``X2``.

    Rows follow the order-major layout over ``X1`` (all values, then all
    gradients observation by observation, then all vech'd Hessians);
    columns follow the same layout over ``X2``.
    """
    row_orders = normalize_orders(row_orders)
    col_orders = normalize_orders(col_orders)
    _check_orders(spec, row_orders + col_orders)
    d = spec.dim
    X1 = _as_points(X1, d)
    X2 = _as_points(X2, d)
    tau = X1[:, None, :] - X2[None, :, :]

    if spec.family is Family.MATERN52 and d > 1:
        def derivative(axes):
            return _iso_matern_derivative(spec, tau, axes)
    else:
        tables = _derivative_tables(spec, tau, 2 * max(row_orders[-1], col_orders[-1]))
        derivative = product_derivative(spec.rho, tables, d)
    return assemble_blocks(d, len(X1), len(X2), row_orders, col_orders, derivative)


def eval_cross_block(spec: KernelSpec, x, x2, row: DerivOrder, col: DerivOrder) -> np.ndarray:
    """Single (row, col) block between two points; shape (block(row), block(col))."""
    x = _as_point(x, spec.dim)
    x2 = _as_point(x2, spec.dim)
    return cross_cov(spec, x[None], x2[None], (row,), (col,))


@dataclass(frozen=True)
class NoiseSpec:
    """Diagonal observation noise, optionally scaled per derivative order."""

    base_var: float = 0.0
    per_order_scale: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.base_var >= 0:
            raise ValueError("noise variance must be nonnegative")
        scale = tuple(float(s) for s in self.per_order_scale)
        if len(scale) != 3 or any(not s >= 0 for s in scale):
            raise ValueError("per_order_scale must be three nonnegative reals")
        object.__setattr__(self, "per_order_scale", scale)

    @classmethod
    def rescaled(cls, base_var: float, delta: float) -> "NoiseSpec":
        """Noise equivalent, in original units, to uniform noise after x -> x/delta."""
        return cls(base_var, (1.0, delta ** -2, delta ** -4))

    def diagonal(self, n: int, dim: int, orders: Sequence[DerivOrder]) -> np.ndarray:
        return np.concatenate([
            np.full(n * o.block_size(dim), self.base_var * self.per_order_scale[o])
            for o in normalize_orders(orders)
        ])


def build_joint_gram(spec: KernelSpec, X, orders=(DerivOrder.VALUE,),
                     noise: NoiseSpec | float | None = None) -> np.ndarray:
    """Joint Gram matrix over the requested derivative orders plus noise."""
    orders = normalize_orders(orders)
    if DerivOrder.VALUE not in orders:
        raise ValueError("orders must include VALUE")
    X = _as_points(X, spec.dim)
    if len(X) == 0:
        raise ValueError("need at least one point")
    K = cross_cov(spec, X, X, orders, orders)
    K = 0.5 * (K + K.T)
    if noise is not None:
        if not isinstance(noise, NoiseSpec):
            noise = NoiseSpec(float(noise))
        K[np.diag_indices_from(K)] += noise.diagonal(len(X), spec.dim, orders)
    return K


def orders_up_to(level: DerivOrder | int) -> tuple[DerivOrder, ...]:
    return tuple(DerivOrder(o) for o in range(int(level) + 1))


__all__ = [
    "Family", "DerivOrder", "KernelSpec", "NoiseSpec", "UnsupportedOrderError",
    "hess_index", "vech", "unvech", "components", "gram_row", "block_offsets",
    "joint_size", "eval_kernel", "eval_cross_block", "cross_cov", "build_joint_gram",
    "orders_up_to", "normalize_orders", "assemble_blocks", "product_derivative",
]

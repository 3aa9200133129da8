"""Binary transaction kernels and the mean-field diffusion coefficient."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .grid import DensityField, Grid

VALIDATION_LATTICE = (0.1, 0.5, 1.0, 2.0, 5.0)
CACHE_THRESHOLD = 256

PhiFn = Callable[[NDArray[np.float64], NDArray[np.float64]], NDArray[np.float64]]
SampleFn = Callable[
    [NDArray[np.float64], NDArray[np.float64], np.random.Generator], NDArray[np.float64]
]
UnitSampleFn = Callable[[np.random.Generator, int], NDArray[np.float64]]


@dataclass(frozen=True, eq=False)
class TransactionKernel:
    """Symmetric variance ``phi(x, y)`` plus a sampler of the transfer ``W(x, y)``.

    ``unit_sample``, when present, declares that the transfer factorises as
    ``min(x, y) * xi`` with ``xi`` independent of the wealths; the agent
    simulator uses it to pre-draw randomness for its compiled loop.
    """

    name: str
    phi: PhiFn
    sample: SampleFn
    unit_sample: UnitSampleFn | None = field(default=None, repr=False)


def _min_sq(x, y):
    return np.minimum(x, y) ** 2


def _coin(rng: np.random.Generator, size: int) -> NDArray[np.float64]:
    return np.where(rng.random(size) < 0.5, -1.0, 1.0)


def _uniform_unit(rng: np.random.Generator, size: int) -> NDArray[np.float64]:
    return rng.uniform(-1.0, 1.0, size)


def yard_sale_kernel() -> TransactionKernel:
    """Fair coin: the transfer is ``+min(x, y)`` or ``-min(x, y)``."""

    def sample(x, y, rng):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return np.minimum(x, y) * _coin(rng, x.size).reshape(x.shape)

    return TransactionKernel("yard-sale", _min_sq, sample, _coin)


def uniform_exchange_kernel() -> TransactionKernel:
    """Transfer uniform on ``[-min(x, y), min(x, y)]``; ``phi = min(x, y)**2 / 3``."""

    def phi(x, y):
        return np.minimum(x, y) ** 2 / 3.0

    def sample(x, y, rng):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return np.minimum(x, y) * _uniform_unit(rng, x.size).reshape(x.shape)

    return TransactionKernel("uniform", phi, sample, _uniform_unit)


KERNELS: dict[str, Callable[[], TransactionKernel]] = {
    "yard-sale": yard_sale_kernel,
    "uniform": uniform_exchange_kernel,
}


def get_kernel(name: str) -> TransactionKernel:
    try:
        return KERNELS[name]()
    except KeyError:
        raise ValueError(
            f"unknown kernel {name!r}; available: {sorted(KERNELS)}"
        ) from None


@dataclass
class KernelCheck:
    name: str
    value: float
    threshold: float
    passed: bool


@dataclass
class KernelValidation:
    kernel: str
    n_samples: int
    checks: list[KernelCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> KernelCheck:
        return next(c for c in self.checks if c.name == name)


def validate_kernel(
    k: TransactionKernel, n_samples: int, rng: np.random.Generator, n_sigma: float = 4.0
) -> KernelValidation:
    """Statistical audit of symmetry, unbiasedness, variance and support.

    ``n_samples`` draws are taken at every point of the fixed lattice.
    The support test is closed (``|W| <= min(x, y)``): the yard-sale atoms
    sit exactly on the endpoints.
    """
    if n_samples < 10_000:
        raise ValueError(f"n_samples must be >= 1e4, got {n_samples}")
    lat = np.array(VALIDATION_LATTICE)
    xs, ys = np.meshgrid(lat, lat, indexing="ij")
    phi_xy = np.asarray(k.phi(xs, ys), dtype=float)
    sym = float(np.max(np.abs(phi_xy - np.asarray(k.phi(ys, xs), dtype=float))))

    worst_z = 0.0
    worst_m2 = 0.0
    worst_m2_ratio = 0.0
    violations = 0
    for x, y, phi in zip(xs.ravel(), ys.ravel(), phi_xy.ravel()):
        s = np.asarray(
            k.sample(np.full(n_samples, x), np.full(n_samples, y), rng), dtype=float
        )
        bound = min(x, y)
        violations += int(np.count_nonzero(np.abs(s) > bound))
        mean = float(s.mean())
        if phi > 0:
            z = abs(mean) * np.sqrt(n_samples / phi)
        else:
            z = 0.0 if mean == 0 else np.inf
        worst_z = max(worst_z, z)

        sq = s * s
        m2 = float(sq.mean())
        se = float(sq.std()) / np.sqrt(n_samples)
        allowed = n_sigma * se + 1e-12 * max(phi, 1e-300)
        rel = abs(m2 - phi) / phi if phi > 0 else abs(m2)
        worst_m2 = max(worst_m2, rel)
        worst_m2_ratio = max(worst_m2_ratio, abs(m2 - phi) / allowed)

    checks = [
        KernelCheck("symmetry", sym, 1e-12, sym <= 1e-12),
        KernelCheck("unbiased_z", worst_z, n_sigma, worst_z <= n_sigma),
        KernelCheck("second_moment_rel", worst_m2, n_sigma, worst_m2_ratio <= 1.0),
        KernelCheck("support_violations", float(violations), 0.0, violations == 0),
    ]
    return KernelValidation(k.name, n_samples, checks)


@lru_cache(maxsize=32)
def kernel_matrix(k: TransactionKernel, grid: Grid) -> NDArray[np.float64]:
    """``K[i, j] = phi(w_i, w_j) * q_j`` so that ``D = gamma/2 * K @ rho``."""
    w = grid.nodes
    mat = np.asarray(k.phi(w[:, None], w[None, :]), dtype=float) * grid.weights[None, :]
    mat.flags.writeable = False
    return mat


def check_gamma(gamma: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")


def kernel_integral(
    k: TransactionKernel,
    f: NDArray[np.float64],
    grid: Grid,
    use_cache: bool | None = None,
) -> NDArray[np.float64]:
    """``int phi(w_i, y) f(y) dy`` for an arbitrary (possibly signed) nodal ``f``."""
    f = np.asarray(f, dtype=float)
    if use_cache is None:
        use_cache = grid.n_cells > CACHE_THRESHOLD
    if use_cache:
        return kernel_matrix(k, grid) @ f
    w = grid.nodes
    qf = grid.weights * f
    out = np.empty(grid.n_cells)
    for i, wi in enumerate(w):
        out[i] = np.dot(np.asarray(k.phi(wi, w), dtype=float), qf)
    return out


def diffusion_coefficient(
    k: TransactionKernel,
    rho: DensityField,
    gamma: float,
    use_cache: bool | None = None,
) -> NDArray[np.float64]:
    """``D_i = gamma/2 * int phi(w_i, y) rho(y) dy`` by trapezoid quadrature."""
    check_gamma(gamma)
    if np.any(rho.values < 0):
        raise ValueError("diffusion coefficient needs a nonnegative density")
    return 0.5 * gamma * kernel_integral(k, rho.values, rho.grid, use_cache)

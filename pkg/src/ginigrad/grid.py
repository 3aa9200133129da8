"""Uniform 1-D wealth grid, trapezoid quadrature and finite differences.

Every integral in the package goes through :func:`integrate` or
:func:`cumulative_integral` so that discrete identities (moment
conservation, the Gini Fréchet-derivative identity) hold with the same
weights everywhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import brentq

DEFAULT_W_MAX = 20.0


@dataclass(frozen=True)
class Grid:
    """Uniform mesh ``w_i = i*h`` on ``[0, w_max]`` with ``n_cells`` nodes."""

    w_max: float = DEFAULT_W_MAX
    n_cells: int = 400

    def __post_init__(self) -> None:
        if not np.isfinite(self.w_max) or self.w_max <= 0:
            raise ValueError(f"w_max must be positive, got {self.w_max}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 2:
            raise ValueError(f"n_cells must be an integer >= 2, got {self.n_cells}")

    @property
    def h(self) -> float:
        return self.w_max / (self.n_cells - 1)

    @cached_property
    def nodes(self) -> NDArray[np.float64]:
        w = np.arange(self.n_cells, dtype=float) * self.h
        w.flags.writeable = False
        return w

    @cached_property
    def weights(self) -> NDArray[np.float64]:
        """Trapezoid weights; they double as finite-volume cell sizes."""
        q = np.full(self.n_cells, self.h)
        q[0] = q[-1] = 0.5 * self.h
        q.flags.writeable = False
        return q

    def refined(self, factor: int = 2) -> Grid:
        """Grid whose nodes contain this grid's nodes."""
        return Grid(self.w_max, factor * (self.n_cells - 1) + 1)


def _as_nodal(f: ArrayLike, grid: Grid) -> NDArray[np.float64]:
    arr = np.asarray(f, dtype=float)
    if arr.shape != (grid.n_cells,):
        raise ValueError(
            f"expected {grid.n_cells} nodal values, got array of shape {arr.shape}"
        )
    return arr


def integrate(f: ArrayLike, grid: Grid) -> float:
    """Trapezoid rule over the whole grid."""
    return float(np.dot(grid.weights, _as_nodal(f, grid)))


def cumulative_integral(f: ArrayLike, grid: Grid) -> NDArray[np.float64]:
    """Running trapezoid integral ``F_i = int_0^{w_i} f``; ``F_0 = 0``."""
    f = _as_nodal(f, grid)
    out = np.empty_like(f)
    out[0] = 0.0
    np.cumsum(0.5 * grid.h * (f[1:] + f[:-1]), out=out[1:])
    return out


def tail_integral(f: ArrayLike, grid: Grid) -> NDArray[np.float64]:
    """Running trapezoid integral from the right, ``int_{w_i}^{w_max} f``."""
    f = _as_nodal(f, grid)
    return cumulative_integral(f[::-1], grid)[::-1]


def second_derivative(f: ArrayLike, grid: Grid) -> NDArray[np.float64]:
    """Three-point centred second difference, second-order one-sided at the ends."""
    f = _as_nodal(f, grid)
    n = grid.n_cells
    if n < 3:
        raise ValueError(f"second_derivative needs at least 3 nodes, got {n}")
    h2 = grid.h**2
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h2
    if n == 3:
        out[0] = out[-1] = out[1]
    else:
        out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2
        out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / h2
    return out


def first_derivative(f: ArrayLike, grid: Grid) -> NDArray[np.float64]:
    f = _as_nodal(f, grid)
    return np.gradient(f, grid.h, edge_order=2)


def numerical_frechet(
    functional: Callable[["DensityField"], float],
    rho: "DensityField",
    eps: float | ArrayLike | None = None,
) -> NDArray[np.float64]:
    """Central-difference L2 gradient of ``functional`` at ``rho``.

    Node ``i`` is perturbed by ``+-eps_i`` and the difference quotient is
    divided by the quadrature weight, so the result approximates the
    Fréchet derivative as a function rather than the coordinate gradient.
    Perturbed states are built with ``check=False``; the functional must
    tolerate slightly negative entries.
    """
    grid = rho.grid
    base = rho.values
    if eps is None:
        eps = 1e-5 * max(float(np.max(np.abs(base))), 1e-300)
    eps_arr = np.broadcast_to(np.asarray(eps, dtype=float), base.shape)
    if np.any(eps_arr <= 0) or not np.all(np.isfinite(eps_arr)):
        raise ValueError("perturbation size must be positive")
    q = grid.weights
    out = np.empty(grid.n_cells)
    work = base.copy()
    for i in range(grid.n_cells):
        work[i] = base[i] + eps_arr[i]
        f_plus = functional(DensityField(grid, work, check=False))
        work[i] = base[i] - eps_arr[i]
        f_minus = functional(DensityField(grid, work, check=False))
        work[i] = base[i]
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"functional evaluation failed at node {i}")
        out[i] = (f_plus - f_minus) / (2.0 * eps_arr[i] * q[i])
    return out


@dataclass(frozen=True, eq=False)
class DensityField:
    """Nodal density on a :class:`Grid` with cached moments."""

    grid: Grid
    values: NDArray[np.float64]
    check: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        vals = np.array(_as_nodal(self.values, self.grid), dtype=float, copy=True)
        if self.check:
            if not np.all(np.isfinite(vals)):
                raise ValueError("density contains non-finite values")
            if np.any(vals < 0):
                raise ValueError(
                    f"density must be nonnegative (min value {vals.min():.3e})"
                )
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @cached_property
    def m0(self) -> float:
        return integrate(self.values, self.grid)

    @cached_property
    def m1(self) -> float:
        return integrate(self.grid.nodes * self.values, self.grid)

    @cached_property
    def m4(self) -> float:
        return integrate(self.grid.nodes**4 * self.values, self.grid)

    def moment(self, k: int) -> float:
        return integrate(self.grid.nodes**k * self.values, self.grid)

    def in_m1(self, tol: float = 1e-6) -> bool:
        """Unit mass and unit mean within ``tol``."""
        return abs(self.m0 - 1.0) <= tol and abs(self.m1 - 1.0) <= tol

    def tail_mass(self, fraction: float = 0.05) -> float:
        """Mass carried by the top ``fraction`` of the domain."""
        w = self.grid.nodes
        cut = (1.0 - fraction) * self.grid.w_max
        return integrate(np.where(w >= cut, self.values, 0.0), self.grid)

    def with_values(self, values: ArrayLike, check: bool = True) -> DensityField:
        return DensityField(self.grid, np.asarray(values, dtype=float), check=check)

    # constructors -------------------------------------------------------

    @classmethod
    def from_function(
        cls, grid: Grid, f: Callable[[NDArray[np.float64]], ArrayLike]
    ) -> DensityField:
        return cls(grid, np.asarray(f(grid.nodes), dtype=float))

    @classmethod
    def exponential(cls, grid: Grid, normalize: bool = True) -> DensityField:
        rho = cls.from_function(grid, lambda w: np.exp(-w))
        return normalize_to_m1(lambda w: np.exp(-w), grid) if normalize else rho

    @classmethod
    def uniform(cls, grid: Grid, a: float, b: float) -> DensityField:
        if not 0 <= a < b:
            raise ValueError(f"need 0 <= a < b, got a={a}, b={b}")
        rho = cls.from_function(
            grid, lambda w: np.where((w >= a) & (w <= b), 1.0 / (b - a), 0.0)
        )
        return rho

    @classmethod
    def bump(
        cls, grid: Grid, center: float = 1.0, width: float = 0.1, normalize: bool = True
    ) -> DensityField:
        """Gaussian bump; with ``normalize`` it is rescaled into M1."""
        if width <= 0:
            raise ValueError("bump width must be positive")

        def profile(w: NDArray[np.float64]) -> NDArray[np.float64]:
            return np.exp(-0.5 * ((w - center) / width) ** 2)

        if normalize:
            return normalize_to_m1(profile, grid)
        rho = cls.from_function(grid, profile)
        return rho.with_values(rho.values / rho.m0)

    # serialization ------------------------------------------------------

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["w", "rho"])
            for w, r in zip(self.grid.nodes, self.values):
                writer.writerow([f"{w:.17g}", f"{r:.17g}"])

    @classmethod
    def from_csv(cls, path: str | Path) -> DensityField:
        path = Path(path)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [c.strip() for c in header] != ["w", "rho"]:
                raise ValueError(f"{path}: expected header 'w,rho', got {header}")
            rows = [(float(a), float(b)) for a, b in reader]
        if len(rows) < 2:
            raise ValueError(f"{path}: need at least two rows")
        w = np.array([r[0] for r in rows])
        rho = np.array([r[1] for r in rows])
        grid = Grid(float(w[-1]), len(w))
        if w[0] != 0.0 or not np.allclose(w, grid.nodes, rtol=1e-12, atol=1e-12):
            raise ValueError(f"{path}: nodes are not a uniform grid starting at 0")
        return cls(grid, rho)


def normalize_to_m1(
    profile: Callable[[NDArray[np.float64]], ArrayLike], grid: Grid
) -> DensityField:
    """Dilate and rescale a nonnegative profile so its discrete mass and mean are 1.

    Finds ``lam`` with discrete mean of ``profile(w / lam)`` equal to one,
    then divides by the mass. Dilation keeps the shape family, unlike an
    additive correction, and cannot create negative values.
    """
    w = grid.nodes

    def sample(lam: float) -> NDArray[np.float64]:
        return np.asarray(profile(w / lam), dtype=float)

    def mean_gap(log_lam: float) -> float:
        p = sample(np.exp(log_lam))
        return integrate(w * p, grid) / integrate(p, grid) - 1.0

    base = sample(1.0)
    if np.any(base < 0) or integrate(base, grid) <= 0:
        raise ValueError("profile must be nonnegative with positive mass")
    lo, hi = -0.5, 0.5
    while mean_gap(lo) > 0:
        lo -= 0.5
        if lo < -20:
            raise ValueError("cannot bring profile mean down to 1 on this grid")
    while mean_gap(hi) < 0:
        hi += 0.5
        if hi > 20:
            raise ValueError("cannot bring profile mean up to 1 on this grid")
    lam = float(np.exp(brentq(mean_gap, lo, hi, xtol=1e-15, rtol=1e-15)))
    p = sample(lam)
    return DensityField(grid, p / integrate(p, grid))

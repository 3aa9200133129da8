"""Conservative explicit scheme for ``d_t rho = d_ww (D[w, rho] rho)``.

Finite-volume form on the trapezoid cells: ``Phi = D rho`` lives on the
nodes, face fluxes are ``J = (Phi_{i+1} - Phi_i) / h`` and node ``i``
changes by ``dt (J_{i+1/2} - J_{i-1/2}) / q_i`` with ``q_i`` the trapezoid
weight. Zero flux through the outer faces conserves the discrete mass;
pinning ``Phi`` to zero at both end nodes makes the face fluxes telescope
to zero in the first moment as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .gini import gini_coefficient
from .grid import DensityField, Grid
from .kernels import TransactionKernel, check_gamma, diffusion_coefficient, kernel_integral

NEGATIVE_TOLERANCE = 1e-12
BLOWUP_THRESHOLD = 1e6
M1_PRECONDITION = 1e-6


class StabilityError(RuntimeError):
    """Raised when the explicit update leaves the admissible set."""


@dataclass(frozen=True)
class SchemeConfig:
    dt: float | str = "auto"
    T: float = 5.0
    gamma: float = 0.1
    safety: float = 0.5
    snapshot_every: int = 1

    def __post_init__(self) -> None:
        if isinstance(self.dt, str):
            if self.dt != "auto":
                raise ValueError(f"dt must be a positive number or 'auto', got {self.dt!r}")
        elif not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        check_gamma(self.gamma)
        if not 0.0 < self.safety <= 1.0:
            raise ValueError(f"safety must lie in (0, 1], got {self.safety}")
        if int(self.snapshot_every) != self.snapshot_every or self.snapshot_every < 1:
            raise ValueError("snapshot_every must be a positive integer")


@dataclass(frozen=True)
class PdeState:
    rho: DensityField
    t: float
    phi: NDArray[np.float64] = field(repr=False)


def flux_potential(rho: NDArray[np.float64], D: NDArray[np.float64]) -> NDArray[np.float64]:
    phi = D * rho
    phi[0] = 0.0
    phi[-1] = 0.0
    return phi


def divergence(phi: NDArray[np.float64], grid: Grid) -> NDArray[np.float64]:
    """Discrete ``d_ww phi`` in flux form with closed outer faces."""
    J = np.diff(phi) / grid.h
    out = np.zeros_like(phi)
    out[:-1] += J
    out[1:] -= J
    return out / grid.weights


def rhs(rho: DensityField, k: TransactionKernel, gamma: float) -> NDArray[np.float64]:
    D = diffusion_coefficient(k, rho, gamma, use_cache=True)
    return divergence(flux_potential(rho.values, D), rho.grid)


def stable_dt(
    rho: DensityField,
    k: TransactionKernel,
    gamma: float,
    grid: Grid | None = None,
    safety: float = 0.5,
    T: float = np.inf,
) -> float:
    """``safety * h^2 / (2 max D)``; ``T`` when there is no diffusion at all."""
    grid = grid or rho.grid
    D = diffusion_coefficient(k, rho, gamma, use_cache=True)
    return dt_from_coefficient(D, grid.h, safety, T)


def dt_from_coefficient(D: NDArray[np.float64], h: float, safety: float, T: float) -> float:
    dmax = float(np.max(D))
    if dmax <= 0:
        return T
    return safety * h * h / (2.0 * dmax)


def make_state(rho: DensityField, k: TransactionKernel, gamma: float, t: float = 0.0) -> PdeState:
    D = diffusion_coefficient(k, rho, gamma, use_cache=True)
    return PdeState(rho, t, flux_potential(rho.values, D))


def step_pde(s: PdeState, k: TransactionKernel, gamma: float, dt: float) -> PdeState:
    """One explicit Euler step; the coefficient ``D`` is refreshed from ``s``."""
    grid = s.rho.grid
    new = s.rho.values + dt * divergence(s.phi, grid)
    low = float(new.min())
    if low < -NEGATIVE_TOLERANCE:
        raise StabilityError(
            f"negative density {low:.3e} at t={s.t + dt:.6g} (dt={dt:.3e} likely above CFL)"
        )
    peak = float(np.max(np.abs(new)))
    if not np.isfinite(peak) or peak > BLOWUP_THRESHOLD:
        raise StabilityError(f"density blew up (max |rho| = {peak:.3e}) at t={s.t + dt:.6g}")
    # entries in [-1e-12, 0) are roundoff and are kept as they are
    rho = DensityField(grid, new, check=low >= 0)
    D = 0.5 * gamma * kernel_integral(k, new, grid, use_cache=True)
    return PdeState(rho, s.t + dt, flux_potential(new.copy(), D))


@dataclass
class PdeTrajectory:
    grid: Grid
    kernel: str
    gamma: float
    dt: float
    t: NDArray[np.float64]
    gini: NDArray[np.float64]
    m0: NDArray[np.float64]
    m1: NDArray[np.float64]
    m4: NDArray[np.float64]
    snapshot_t: NDArray[np.float64]
    snapshots: NDArray[np.float64]  # shape (n_snapshots, n_cells)

    def density(self, j: int) -> DensityField:
        vals = self.snapshots[j]
        return DensityField(self.grid, vals, check=bool(vals.min() >= 0))

    @property
    def n_snapshots(self) -> int:
        return self.snapshots.shape[0]

    def max_relative_drift(self) -> tuple[float, float]:
        d0 = float(np.max(np.abs(self.m0 - self.m0[0])) / abs(self.m0[0]))
        d1 = float(np.max(np.abs(self.m1 - self.m1[0])) / abs(self.m1[0]))
        return d0, d1

    def min_gini_increment(self) -> float:
        return float(np.min(np.diff(self.gini))) if self.gini.size > 1 else 0.0


def solve(
    rho0: DensityField,
    k: TransactionKernel,
    gamma: float,
    T: float,
    scheme: SchemeConfig | None = None,
) -> PdeTrajectory:
    """Integrate to ``T`` with a fixed step, recording Gini and moments every step.

    With ``dt="auto"`` the step is ``safety`` times the explicit limit of the
    initial coefficient, shortened so that it divides ``T``.
    """
    scheme = scheme or SchemeConfig(T=T, gamma=gamma)
    check_gamma(gamma)
    if not rho0.in_m1(M1_PRECONDITION):
        raise ValueError(
            f"initial density must have unit mass and mean within {M1_PRECONDITION} "
            f"(m0={rho0.m0:.9g}, m1={rho0.m1:.9g})"
        )
    grid = rho0.grid
    state = make_state(rho0, k, gamma)
    if scheme.dt == "auto":
        D0 = diffusion_coefficient(k, rho0, gamma, use_cache=True)
        dt = dt_from_coefficient(D0, grid.h, scheme.safety, T)
    else:
        dt = float(scheme.dt)
    n_steps = max(1, int(np.ceil(T / dt - 1e-9)))
    dt = T / n_steps

    t = np.empty(n_steps + 1)
    gini = np.empty(n_steps + 1)
    m0 = np.empty(n_steps + 1)
    m1 = np.empty(n_steps + 1)
    m4 = np.empty(n_steps + 1)
    snap_idx = list(range(0, n_steps + 1, scheme.snapshot_every))
    if snap_idx[-1] != n_steps:
        snap_idx.append(n_steps)
    snapshots = np.empty((len(snap_idx), grid.n_cells))
    snap_t = np.empty(len(snap_idx))

    def record(i: int, s: PdeState) -> None:
        t[i] = s.t
        gini[i] = gini_coefficient(s.rho)
        m0[i] = s.rho.m0
        m1[i] = s.rho.m1
        m4[i] = s.rho.m4

    record(0, state)
    next_snap = 0
    if snap_idx[0] == 0:
        snapshots[0] = state.rho.values
        snap_t[0] = 0.0
        next_snap = 1
    for i in range(1, n_steps + 1):
        state = step_pde(state, k, gamma, dt)
        state = PdeState(state.rho, i * dt, state.phi)
        record(i, state)
        if next_snap < len(snap_idx) and snap_idx[next_snap] == i:
            snapshots[next_snap] = state.rho.values
            snap_t[next_snap] = state.t
            next_snap += 1
    return PdeTrajectory(grid, k.name, gamma, dt, t, gini, m0, m1, m4, snap_t, snapshots)

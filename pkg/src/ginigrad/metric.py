"""Weighted biharmonic geometry on a 1-D grid.

The tangent norm of a density perturbation ``h`` is found by solving
``(w u)'' = h`` with ``u = u' = 0`` at both ends. In one dimension this is
two quadratures: ``v = w u`` is the double antiderivative of ``h`` and the
squared dual norm is ``int v^2 / w``. Solvability needs ``int h = 0`` and
``int x h = 0`` (the data must annihilate affine functions).

The double antiderivative is taken as ``v(x) = x int_0^x h - int_0^x y h``.
With trapezoid weights this makes ``v`` vanish at the right end exactly
whenever the discrete compatibility sums vanish, and its centred second
difference reproduces ``h`` node by node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .gini import frechet_gini, gini_coefficient
from .grid import DensityField, Grid, cumulative_integral, integrate, second_derivative
from .kernels import TransactionKernel, diffusion_coefficient
from .pde import PdeTrajectory, divergence

FLOOR_FACTOR = 1e-10
COMPAT_TOL = 1e-8
WEIGHT_MODES = ("rho", "D", "dx")


class IncompatibleDataError(ValueError):
    """The datum has nonzero mass or first moment."""


@dataclass(frozen=True)
class MetricWeight:
    """Nonnegative nodal weight, floored at ``FLOOR_FACTOR * max`` before division."""

    values: NDArray[np.float64]
    floor: float = field(default=0.0)

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim != 1 or not np.all(np.isfinite(vals)):
            raise ValueError("weight must be a finite 1-D array")
        if np.any(vals < 0) or vals.max() <= 0:
            raise ValueError("weight must be nonnegative and not identically zero")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        if self.floor <= 0:
            object.__setattr__(self, "floor", FLOOR_FACTOR * float(vals.max()))

    @property
    def regularized(self) -> NDArray[np.float64]:
        return np.maximum(self.values, self.floor)

    def floor_active_interior(self) -> bool:
        return bool(np.any(self.values[1:-1] < self.floor))

    def scaled(self, beta: float) -> MetricWeight:
        return MetricWeight(beta * self.values)

    @classmethod
    def from_density(cls, rho: DensityField) -> MetricWeight:
        return cls(np.maximum(rho.values, 0.0))

    @classmethod
    def from_diffusion(cls, k: TransactionKernel, rho: DensityField, gamma: float) -> MetricWeight:
        vals = np.maximum(rho.values, 0.0)
        return cls(diffusion_coefficient(k, rho.with_values(vals), gamma, use_cache=True))

    @classmethod
    def lebesgue(cls, grid: Grid) -> MetricWeight:
        return cls(np.ones(grid.n_cells))


@dataclass
class MetricSolveResult:
    u: NDArray[np.float64]
    v: NDArray[np.float64] = field(repr=False)
    norm_sq: float
    compat_m0: float
    compat_m1: float
    floor_active: bool


def compatibility(h: ArrayLike, grid: Grid) -> tuple[float, float]:
    h = np.asarray(h, dtype=float)
    return abs(integrate(h, grid)), abs(integrate(grid.nodes * h, grid))


def project_compatible(h: ArrayLike, grid: Grid) -> NDArray[np.float64]:
    """Remove the L2 projection of ``h`` onto ``span{1, x}`` (trapezoid inner product)."""
    h = np.asarray(h, dtype=float)
    x = grid.nodes
    gram = np.array(
        [[integrate(np.ones_like(x), grid), integrate(x, grid)],
         [integrate(x, grid), integrate(x * x, grid)]]
    )
    rhs = np.array([integrate(h, grid), integrate(x * h, grid)])
    a, b = np.linalg.solve(gram, rhs)
    return h - a - b * x


def double_antiderivative(f: ArrayLike, grid: Grid) -> NDArray[np.float64]:
    """``int_0^x (x - y) f(y) dy``; zero value and slope at ``x = 0``."""
    f = np.asarray(f, dtype=float)
    x = grid.nodes
    return x * cumulative_integral(f, grid) - cumulative_integral(x * f, grid)


def _check_weight(weight: MetricWeight, grid: Grid) -> None:
    if weight.values.shape != (grid.n_cells,):
        raise ValueError(f"weight has {weight.values.size} values, grid has {grid.n_cells} nodes")


def solve_weighted_biharmonic(
    weight: MetricWeight, h: ArrayLike, grid: Grid, tol: float = COMPAT_TOL
) -> MetricSolveResult:
    """Solve ``(w u)'' = h`` with clamped ends; raises on incompatible data."""
    _check_weight(weight, grid)
    h = np.asarray(h, dtype=float)
    if h.shape != (grid.n_cells,):
        raise ValueError(f"datum has shape {h.shape}, grid has {grid.n_cells} nodes")
    c0, c1 = compatibility(h, grid)
    if c0 > tol or c1 > tol:
        raise IncompatibleDataError(
            f"datum is not compatible: |int h| = {c0:.3e}, |int x h| = {c1:.3e} (tol {tol:g});"
            " call project_compatible first if that is intended"
        )
    v = double_antiderivative(h, grid)
    wr = weight.regularized
    u = v / wr
    return MetricSolveResult(
        u=u,
        v=v,
        norm_sq=integrate(v * v / wr, grid),
        compat_m0=c0,
        compat_m1=c1,
        floor_active=weight.floor_active_interior(),
    )


def dual_norm(weight: MetricWeight, h: ArrayLike, grid: Grid, tol: float = COMPAT_TOL) -> float:
    return float(np.sqrt(solve_weighted_biharmonic(weight, h, grid, tol).norm_sq))


def dual_inner_product(
    weight: MetricWeight, f: ArrayLike, g: ArrayLike, grid: Grid, tol: float = COMPAT_TOL
) -> float:
    """``int w u_f u_g``, symmetric in ``f`` and ``g`` by construction."""
    sf = solve_weighted_biharmonic(weight, f, grid, tol)
    sg = solve_weighted_biharmonic(weight, g, grid, tol)
    return integrate(sf.v * sg.v / weight.regularized, grid)


def dual_pairings(
    weight: MetricWeight, f: ArrayLike, g: ArrayLike, grid: Grid, tol: float = COMPAT_TOL
) -> tuple[float, float, float]:
    """The inner product three ways: ``int w u_f u_g``, ``int f psi_g`` and ``int g psi_f``.

    ``psi`` is the double antiderivative of ``u`` pinned to zero value and
    slope at the left end; the pairings do not see the affine gauge.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    sf = solve_weighted_biharmonic(weight, f, grid, tol)
    sg = solve_weighted_biharmonic(weight, g, grid, tol)
    psi_f = double_antiderivative(sf.u, grid)
    psi_g = double_antiderivative(sg.u, grid)
    return (
        integrate(sf.v * sg.v / weight.regularized, grid),
        integrate(f * psi_g, grid),
        integrate(g * psi_f, grid),
    )


def cd_gradient(dF: ArrayLike, D: ArrayLike, grid: Grid) -> NDArray[np.float64]:
    """``(D F'')''`` with ``D F''`` pinned to zero at the end nodes.

    The outer derivative uses the mean-field solver's flux form, so for
    ``dF = frechet_gini(rho)`` this reproduces the solver's right-hand side.
    """
    dF = np.asarray(dF, dtype=float)
    D = np.asarray(D, dtype=float)
    if grid.n_cells < 4:
        raise ValueError("cd_gradient needs at least 4 nodes")
    phi = D * second_derivative(dF, grid)
    phi[0] = 0.0
    phi[-1] = 0.0
    return divergence(phi, grid)


# trajectories -------------------------------------------------------------


@dataclass
class GradientFlowReport:
    t: NDArray[np.float64]
    residual: NDArray[np.float64]
    energy_defect: NDArray[np.float64]
    dgini_dt: NDArray[np.float64]
    dissipation: NDArray[np.float64]

    @property
    def median_residual(self) -> float:
        return float(np.median(self.residual))

    @property
    def median_energy_defect(self) -> float:
        return float(np.median(self.energy_defect))

    def to_dict(self) -> dict:
        return {
            "median_residual": self.median_residual,
            "median_energy_defect": self.median_energy_defect,
            "max_residual": float(np.max(self.residual)),
            "max_energy_defect": float(np.max(self.energy_defect)),
            "n_times": int(self.t.size),
        }


def _l2(f: NDArray[np.float64], grid: Grid) -> float:
    return float(np.sqrt(integrate(f * f, grid)))


def verify_gradient_flow(
    traj: PdeTrajectory,
    k: TransactionKernel,
    gamma: float,
    stride: int = 1,
    cadence_tol: float = 0.1,
) -> GradientFlowReport:
    """Compare the trajectory's time derivative with the metric gradient of the Gini functional.

    At every interior snapshot (every ``stride``-th one) reports the L2
    relative gap between the centred difference of the snapshots and
    ``cd_gradient(frechet_gini(rho), D)``, and the relative gap between
    the Gini growth rate and twice the squared dual norm of the time
    derivative. Raises if halving the time resolution changes the
    difference quotient by more than ``cadence_tol`` (median, relative).
    """
    grid = traj.grid
    S = traj.snapshots
    ts = traj.snapshot_t
    if S.shape[0] < 5:
        raise ValueError("need at least 5 snapshots for centred time differences")
    idx = np.arange(2, S.shape[0] - 2, stride)
    gini = np.array([gini_coefficient(traj.density(j)) for j in range(S.shape[0])])

    cadence = []
    res, defect, rates, diss = [], [], [], []
    for j in idx:
        rdot = (S[j + 1] - S[j - 1]) / (ts[j + 1] - ts[j - 1])
        rdot2 = (S[j + 2] - S[j - 2]) / (ts[j + 2] - ts[j - 2])
        scale = _l2(rdot, grid)
        cadence.append(_l2(rdot - rdot2, grid) / scale if scale > 0 else 0.0)

        rho = traj.density(j)
        weight = MetricWeight.from_diffusion(k, rho, gamma)
        grad = cd_gradient(frechet_gini(rho.with_values(np.maximum(rho.values, 0.0))),
                           weight.values, grid)
        res.append(_l2(rdot - grad, grid) / scale if scale > 0 else _l2(grad, grid))

        rate = (gini[j + 1] - gini[j - 1]) / (ts[j + 1] - ts[j - 1])
        nsq = solve_weighted_biharmonic(weight, rdot, grid).norm_sq
        rates.append(rate)
        diss.append(2.0 * nsq)
        defect.append(abs(rate - 2.0 * nsq) / abs(rate) if rate != 0 else abs(2.0 * nsq))

    if np.median(cadence) > cadence_tol:
        raise ValueError(
            f"snapshot cadence too coarse: halving the resolution changes the time "
            f"derivative by {np.median(cadence):.2e} (median relative)"
        )
    return GradientFlowReport(ts[idx], np.array(res), np.array(defect), np.array(rates), np.array(diss))


def conserved_quantities_check(traj: PdeTrajectory, eta: ArrayLike) -> float:
    """Largest change of ``int eta rho_t`` over the snapshots; ``eta`` must be affine."""
    grid = traj.grid
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (grid.n_cells,):
        raise ValueError("eta must have one value per node")
    curvature = np.abs(np.diff(eta, 2))
    if np.any(curvature > 1e-9 * max(1.0, float(np.max(np.abs(eta))))):
        raise ValueError("only affine eta are conserved in one dimension")
    vals = traj.snapshots @ (grid.weights * eta)
    return float(np.max(np.abs(vals - vals[0])))


def _weight_for(
    rho: DensityField,
    mode: str,
    k: TransactionKernel | None,
    gamma: float | None,
) -> MetricWeight:
    if mode == "rho":
        return MetricWeight(np.maximum(rho.values, 0.0))
    if mode == "D":
        if k is None or gamma is None:
            raise ValueError("weight mode 'D' needs a kernel and gamma")
        return MetricWeight.from_diffusion(k, rho, gamma)
    if mode == "dx":
        return MetricWeight.lebesgue(rho.grid)
    raise ValueError(f"unknown weight mode {mode!r}; choose from {WEIGHT_MODES}")


def _segments(path: Sequence[DensityField], times: ArrayLike):
    t = np.asarray(times, dtype=float)
    if len(path) != t.size or t.size < 2:
        raise ValueError("need at least two path points with one time each")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    grid = path[0].grid
    for j in range(t.size - 1):
        a, b = path[j].values, path[j + 1].values
        dt = t[j + 1] - t[j]
        yield j, DensityField(grid, 0.5 * (a + b), check=False), (b - a) / dt, dt


def segment_speeds(
    path: Sequence[DensityField],
    times: ArrayLike,
    weight_mode: str = "rho",
    k: TransactionKernel | None = None,
    gamma: float | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Per segment: time step and dual norm of the difference quotient at the midpoint density."""
    grid = path[0].grid
    dts, speeds = [], []
    for _, mid, mdot, dt in _segments(path, times):
        try:
            speeds.append(dual_norm(_weight_for(mid, weight_mode, k, gamma), mdot, grid))
        except IncompatibleDataError as exc:
            raise IncompatibleDataError(f"consecutive path points differ in mass or mean: {exc}") from None
        dts.append(dt)
    return np.array(dts), np.array(speeds)


def curve_action(
    path: Sequence[DensityField],
    times: ArrayLike,
    weight_mode: str = "rho",
    k: TransactionKernel | None = None,
    gamma: float | None = None,
) -> float:
    """Midpoint-rule ``int ||d mu/dt||^2 dt`` along a sampled path."""
    dts, speeds = segment_speeds(path, times, weight_mode, k, gamma)
    return float(np.sum(dts * speeds**2))


def curve_length(
    path: Sequence[DensityField],
    times: ArrayLike,
    weight_mode: str = "rho",
    k: TransactionKernel | None = None,
    gamma: float | None = None,
) -> float:
    """Midpoint-rule ``int ||d mu/dt|| dt``; reparametrisation invariant."""
    dts, speeds = segment_speeds(path, times, weight_mode, k, gamma)
    return float(np.sum(dts * speeds))


def linear_path(a: DensityField, b: DensityField, n_slices: int) -> tuple[list[DensityField], NDArray[np.float64]]:
    t = np.linspace(0.0, 1.0, n_slices + 1)
    return [DensityField(a.grid, (1 - s) * a.values + s * b.values) for s in t], t


# randomized inequality checks --------------------------------------------


def random_density(grid: Grid, rng: np.random.Generator, background: float = 0.05) -> DensityField:
    """Bump mixture on a positive floor, exponentially tilted to unit mass and mean."""
    from scipy.optimize import brentq

    x = grid.nodes
    n_bumps = int(rng.integers(1, 4))
    p = np.full(grid.n_cells, background)
    for _ in range(n_bumps):
        c = rng.uniform(0.2, 0.8) * grid.w_max
        s = rng.uniform(0.05, 0.2) * grid.w_max
        p += rng.uniform(0.2, 1.0) * np.exp(-0.5 * ((x - c) / s) ** 2)

    def gap(theta: float) -> float:
        q = p * np.exp(theta * (x - x.mean()))
        return integrate(x * q, grid) / integrate(q, grid) - 1.0

    theta = brentq(gap, -50.0, 50.0, xtol=1e-14, rtol=1e-15)
    q = p * np.exp(theta * (x - x.mean()))
    return DensityField(grid, q / integrate(q, grid))


@dataclass
class InequalityTrial:
    scaling: tuple[float, float]  # Prop-4.4 style: lhs, rhs
    cor_action: tuple[float, float]
    cor_length: tuple[float, float]
    lower: tuple[float, float]
    upper: tuple[float, float]


@dataclass
class InequalityReport:
    n_trials: int
    tol: float
    trials: list[InequalityTrial] = field(repr=False)

    def violations(self, name: str) -> int:
        return sum(1 for tr in self.trials if getattr(tr, name)[0] > getattr(tr, name)[1] + self.tol)

    def counts(self) -> dict[str, int]:
        return {n: self.violations(n) for n in ("scaling", "cor_action", "cor_length", "lower", "upper")}

    def worst_margin(self, name: str) -> float:
        """Largest ``lhs - rhs``; negative means the inequality held with room to spare."""
        return max(getattr(tr, name)[0] - getattr(tr, name)[1] for tr in self.trials)

    @property
    def passed(self) -> bool:
        return all(v == 0 for v in self.counts().values())


def transport_inequality_suite(
    rng: np.random.Generator,
    n_trials: int = 100,
    grid: Grid | None = None,
    n_slices: int = 64,
    tol: float = 1e-8,
) -> InequalityReport:
    """Randomized pairs ``(lam, nu)`` checked against the norm-comparison and distance bounds.

    For each pair and a third density ``mu``:

    * ``scaling``: ``||f||_{mu'} <= beta^{-1/2} ||f||_{mu}`` with ``mu' = nu``,
      ``mu = lam``, ``beta = min(nu/lam)`` and ``f = nu - mu``;
    * ``cor_action`` / ``cor_length``: root action and length of the straight
      path against ``2 ||lam - nu||_lam``;
    * ``lower``: root action against ``alpha^{-1/2} ||nu - lam||_dx`` with
      ``alpha`` the common lower bound of both densities;
    * ``upper``: ``C^{-1/2} ||nu - lam||_dx`` against the root action, ``C`` the
      larger of the two sups.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    grid = grid or Grid(5.0, 201)
    leb = MetricWeight.lebesgue(grid)
    trials = []
    for _ in range(n_trials):
        lam = random_density(grid, rng)
        nu = random_density(grid, rng)
        mu = random_density(grid, rng)
        diff = nu.values - lam.values

        beta = float(np.min(nu.values / lam.values))
        f = mu.values - lam.values
        scaling = (
            dual_norm(MetricWeight(nu.values), f, grid),
            dual_norm(MetricWeight(lam.values), f, grid) / np.sqrt(beta),
        )

        path, t = linear_path(lam, nu, n_slices)
        dts, speeds = segment_speeds(path, t, "rho")
        root_action = float(np.sqrt(np.sum(dts * speeds**2)))
        length = float(np.sum(dts * speeds))
        bound = 2.0 * dual_norm(MetricWeight(lam.values), diff, grid)

        alpha = float(min(lam.values.min(), nu.values.min()))
        cap = float(max(lam.values.max(), nu.values.max()))
        flat = dual_norm(leb, diff, grid)
        trials.append(
            InequalityTrial(
                scaling=scaling,
                cor_action=(root_action, bound),
                cor_length=(length, bound),
                lower=(root_action, flat / np.sqrt(alpha)),
                upper=(flat / np.sqrt(cap), root_action),
            )
        )
    return InequalityReport(n_trials, tol, trials)


# fourth moment -----------------------------------------------------------


@dataclass
class FourthMomentReport:
    lhs: NDArray[np.float64]  # |d sqrt(m4) / dt| per segment
    rhs: NDArray[np.float64]  # 6 ||mu_dot||
    identity_lhs: NDArray[np.float64]  # int rho_dot x^4
    identity_rhs: NDArray[np.float64]  # 12 int rho u x^2
    tol: float

    @property
    def violations(self) -> int:
        return int(np.sum(self.lhs > self.rhs + self.tol))

    @property
    def identity_rel_error(self) -> float:
        scale = np.maximum(np.abs(self.identity_lhs), 1e-300)
        mask = np.abs(self.identity_lhs) > 0
        if not np.any(mask):
            return float(np.max(np.abs(self.identity_rhs)))
        return float(np.max(np.abs(self.identity_lhs - self.identity_rhs)[mask] / scale[mask]))

    def to_dict(self) -> dict:
        return {
            "segments": int(self.lhs.size),
            "violations": self.violations,
            "max_ratio": float(np.max(self.lhs / np.maximum(self.rhs, 1e-300))) if self.lhs.size else 0.0,
            "identity_rel_error": self.identity_rel_error,
        }


def fourth_moment_check(
    path: Sequence[DensityField], times: ArrayLike, tol: float = 1e-8
) -> FourthMomentReport:
    """Segment-wise ``|d sqrt(m4)/dt| <= 6 ||mu_dot||_{mu}`` with density weight.

    Also records both sides of ``int rho_dot x^4 = 12 int rho u x^2`` at the
    segment midpoints, ``u`` being the metric solve of ``rho_dot``.
    """
    t = np.asarray(times, dtype=float)
    grid = path[0].grid
    x2 = grid.nodes**2
    lhs, rhs, il, ir = [], [], [], []
    for j, mid, mdot, dt in _segments(path, t):
        weight = MetricWeight(np.maximum(mid.values, 0.0))
        sol = solve_weighted_biharmonic(weight, mdot, grid)
        lhs.append(abs(np.sqrt(path[j + 1].m4) - np.sqrt(path[j].m4)) / dt)
        rhs.append(6.0 * np.sqrt(sol.norm_sq))
        il.append(integrate(mdot * x2 * x2, grid))
        ir.append(12.0 * integrate(sol.v * x2, grid))
    return FourthMomentReport(np.array(lhs), np.array(rhs), np.array(il), np.array(ir), tol)

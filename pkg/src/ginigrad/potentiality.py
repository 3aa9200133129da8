"""Testing whether a density-dependent operator is a Fréchet derivative.

A candidate potential is rebuilt from the operator along the ray
``r -> r rho`` (``F[rho] = int_0^1 dr int L[r rho] rho``), differentiated
back numerically, and compared with the operator itself. For a potential
operator the two agree up to discretisation error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .gini import frechet_gini
from .grid import (
    DensityField,
    cumulative_integral,
    first_derivative,
    integrate,
    numerical_frechet,
    tail_integral,
)
from .kernels import kernel_integral, yard_sale_kernel

LOG_FLOOR = 1e-300
MASK_FRACTION = 1e-9
LOG_LIMIT = 20.0


@dataclass(frozen=True)
class OperatorField:
    """``eval(rho)`` returns the operator's nodal values at ``rho``.

    ``positive_only`` marks operators that are undefined where the density
    vanishes (``log rho`` terms); probes of those stay inside ``rho > 0``.
    """

    eval: Callable[[DensityField], NDArray[np.float64]]
    name: str
    positive_only: bool = False

    def __call__(self, rho: DensityField) -> NDArray[np.float64]:
        return np.asarray(self.eval(rho), dtype=float)

    def shifted(self, alpha: float) -> OperatorField:
        """Same operator plus a constant; constants are always potential."""
        return OperatorField(
            lambda rho: self(rho) + alpha, f"{self.name}+{alpha:g}", self.positive_only
        )


def frechet_antiderivative(L: OperatorField, rho: DensityField, n_r: int = 64) -> float:
    """Midpoint rule in ``r`` for ``int_0^1 int L[r rho] rho``, normalised so ``F[0] = 0``."""
    if n_r < 8:
        raise ValueError(f"n_r must be >= 8, got {n_r}")
    grid = rho.grid
    total = 0.0
    for r in (np.arange(n_r) + 0.5) / n_r:
        vals = L(DensityField(grid, r * rho.values, check=False))
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError(f"operator {L.name} is not finite at r = {r:.4f}")
        total += integrate(vals * rho.values, grid)
    return total / n_r


def admissible_mask(rho: DensityField) -> NDArray[np.bool_]:
    """Interior nodes where the density is safely positive."""
    v = rho.values
    mask = v >= MASK_FRACTION * float(v.max())
    mask[0] = mask[-1] = False
    return mask


@dataclass
class PotentialityResult:
    residual: NDArray[np.float64]
    operator: NDArray[np.float64]
    mask: NDArray[np.bool_]

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual[self.mask])))

    @property
    def max_relative(self) -> float:
        return self.max_abs / float(np.max(np.abs(self.operator[self.mask])))


def potentiality_residual(
    L: OperatorField, rho: DensityField, n_r: int = 64, rel_eps: float = 1e-5
) -> PotentialityResult:
    """``numerical_frechet(F) - L[rho]`` on admissible interior nodes, ``F`` rebuilt from ``L``.

    Nodes are perturbed by ``rel_eps * max(rho)``, or by ``rel_eps * rho_i``
    for ``positive_only`` operators so that ``log rho`` never sees a sign
    change.
    """
    mask = admissible_mask(rho)
    if np.any(rho.values[1:-1] <= 0):
        raise ValueError("potentiality test needs a density that is strictly positive in the interior")
    top = float(rho.values.max())
    if L.positive_only:
        eps = rel_eps * np.maximum(rho.values, MASK_FRACTION * top)
    else:
        eps = rel_eps * top
    num = numerical_frechet(lambda r: frechet_antiderivative(L, r, n_r), rho, eps)
    op = L(rho)
    res = np.where(mask, num - op, 0.0)
    return PotentialityResult(res, op, mask)


# operators -----------------------------------------------------------------


def _safe_log(v: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.log(np.maximum(v, LOG_FLOOR))


_YARD_SALE = yard_sale_kernel()


def _yard_sale_D(values: NDArray[np.float64], rho: DensityField, gamma: float = 1.0) -> NDArray[np.float64]:
    # gamma = 1 sits outside the simulator's admissible range, so skip that check
    return 0.5 * gamma * kernel_integral(_YARD_SALE, values, rho.grid, use_cache=True)


def gini_operator() -> OperatorField:
    return OperatorField(frechet_gini, "gini")


def constant_operator(c: float = 1.0) -> OperatorField:
    return OperatorField(lambda rho: np.full(rho.grid.n_cells, c), f"const{c:g}")


def identity_operator() -> OperatorField:
    return OperatorField(lambda rho: rho.values.copy(), "identity")


def cubic_moment_operator() -> OperatorField:
    """``rho(w) * int rho^3``: not the derivative of anything."""
    return OperatorField(lambda rho: rho.values * integrate(rho.values**3, rho.grid), "rho*int(rho^3)")


def mobility_operator(mobility: Callable[[NDArray[np.float64]], NDArray[np.float64]], name: str) -> OperatorField:
    """``int_0^w (rho D)' / m(rho)`` for a user mobility ``m``; exploratory only."""

    def ev(rho: DensityField) -> NDArray[np.float64]:
        v = rho.values
        flux = first_derivative(v * _yard_sale_D(v, rho), rho.grid)
        return cumulative_integral(flux / mobility(np.maximum(v, LOG_FLOOR)), rho.grid)

    return OperatorField(ev, f"mobility:{name}", positive_only=True)


def yard_sale_w2_operator() -> OperatorField:
    """``D[w, rho] + int_0^w D (log rho)'``, the would-be potential of the yard-sale flow under W2."""

    def ev(rho: DensityField) -> NDArray[np.float64]:
        v = rho.values
        D = _yard_sale_D(v, rho)
        return cumulative_integral(D * first_derivative(_safe_log(v), rho.grid), rho.grid) + D

    return OperatorField(ev, "yard-sale-w2", positive_only=True)


OPERATORS: dict[str, Callable[[], OperatorField]] = {
    "yard-sale-w2": yard_sale_w2_operator,
    "gini": gini_operator,
    "rho*int(rho^3)": cubic_moment_operator,
}


@dataclass
class ClosedFormTerms:
    kernel_of_rho_log_rho: NDArray[np.float64]
    coefficient_term: NDArray[np.float64]  # log-weighted D, sign chosen per form
    tail_term: NDArray[np.float64]


def closed_form_terms(rho: DensityField, log_sign: float = 1.0) -> ClosedFormTerms:
    """The three pieces ``D[rho log rho]``, ``(1 + s log rho) D`` and ``(w / rho) R^2``."""
    v = rho.values
    lr = _safe_log(v)
    D = _yard_sale_D(v, rho)
    R = tail_integral(v, rho.grid)
    w = rho.grid.nodes
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = np.where(v > 0, w * R**2 / v, 0.0)
    return ClosedFormTerms(_yard_sale_D(v * lr, rho), (1.0 + log_sign * lr) * D, tail)


def closed_form_residual(rho: DensityField, log_sign: float = 1.0, drop_tail: bool = False) -> NDArray[np.float64]:
    t = closed_form_terms(rho, log_sign)
    tail = 0.0 if drop_tail else t.tail_term
    return 0.5 * (t.kernel_of_rho_log_rho + t.coefficient_term - tail)


@dataclass
class YardSaleResidualReport:
    numeric: NDArray[np.float64]
    closed_form: NDArray[np.float64]  # coefficient (1 + log rho)
    closed_form_alt: NDArray[np.float64]  # coefficient (1 - log rho)
    mask: NDArray[np.bool_]

    @staticmethod
    def _rel(a: NDArray[np.float64], b: NDArray[np.float64], m: NDArray[np.bool_]) -> float:
        return float(np.max(np.abs(a - b)[m]) / np.max(np.abs(b)[m]))

    @property
    def max_rel_diff(self) -> float:
        return self._rel(self.numeric, self.closed_form, self.mask)

    @property
    def max_rel_diff_alt(self) -> float:
        return self._rel(self.numeric, self.closed_form_alt, self.mask)

    @property
    def closed_form_max(self) -> float:
        return float(np.max(np.abs(self.closed_form[self.mask])))

    @property
    def numeric_max(self) -> float:
        return float(np.max(np.abs(self.numeric[self.mask])))

    def to_dict(self) -> dict:
        return {
            "max_rel_diff": self.max_rel_diff,
            "max_rel_diff_alt": self.max_rel_diff_alt,
            "closed_form_max": self.closed_form_max,
            "closed_form_alt_max": float(np.max(np.abs(self.closed_form_alt[self.mask]))),
            "numeric_max": self.numeric_max,
            "n_admissible": int(self.mask.sum()),
        }


def yard_sale_w2_residual(rho: DensityField, n_r: int = 64) -> YardSaleResidualReport:
    """Numeric potentiality residual of the yard-sale W2 operator next to two closed forms.

    ``closed_form`` carries ``(1 + log rho) D`` in its middle term;
    ``closed_form_alt`` carries ``(1 - log rho) D``, which keeps the
    boundary term ``D log rho`` produced when the inner integral is
    integrated by parts. Comparison nodes are admissible interior nodes
    with ``|log rho| < 20``.
    """
    res = potentiality_residual(yard_sale_w2_operator(), rho, n_r)
    lr = _safe_log(rho.values)
    mask = res.mask & (np.abs(lr) < LOG_LIMIT)
    if not np.any(mask):
        raise ValueError("no admissible nodes: density is degenerate")
    return YardSaleResidualReport(
        numeric=res.residual,
        closed_form=closed_form_residual(rho, +1.0),
        closed_form_alt=closed_form_residual(rho, -1.0),
        mask=mask,
    )

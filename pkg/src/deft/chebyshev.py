"""Chebyshev wavelet filters on graph Laplacians.

A filter stores coefficients c_0..c_M of

    h(y) = c_0 / 2 + sum_{k>=1} c_k T_k(y),    y = (x - a) / a,  a = lambda_max / 2,

fitted once at scale 1. Other scales reuse the same coefficients by
substituting s * x for x (the rescaling trick), so a single coefficient
vector serves every scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .graph import GraphSnapshot, SparseMatrix, estimate_lambda_max

CLAMP = "clamp"
EXTRAPOLATE = "extrapolate"
LAMBDA_MARGIN = 1.01


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ChebyshevFilter:
    coefficients: np.ndarray
    lambda_max: float

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=np.float64).reshape(-1)
        if len(c) == 0:
            raise ValueError("a filter needs at least one coefficient")
        if not np.all(np.isfinite(c)):
            raise NumericError("non-finite filter coefficient")
        if not self.lambda_max > 0:
            raise ValueError("lambda_max must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "lambda_max", float(self.lambda_max))

    @property
    def order(self) -> int:
        return len(self.coefficients) - 1

    @classmethod
    def all_pass(cls, order: int, lambda_max: float) -> "ChebyshevFilter":
        return cls(all_pass_coefficients(order), lambda_max)


def all_pass_coefficients(order: int) -> np.ndarray:
    """Coefficients of g == 1 under the halved-c_0 convention."""
    c = np.zeros(order + 1)
    c[0] = 2.0
    return c


@dataclass(frozen=True)
class ScaleSet:
    scales: tuple[float, ...]
    clamp_mode: str = CLAMP

    def __post_init__(self):
        scales = tuple(sorted(float(s) for s in self.scales))
        if not scales:
            raise ValueError("at least one scale is required")
        if any(not (s > 0 and math.isfinite(s)) for s in scales):
            raise ValueError("scales must be finite and positive")
        if self.clamp_mode not in (CLAMP, EXTRAPOLATE):
            raise ValueError(f"unknown clamp mode {self.clamp_mode!r}")
        object.__setattr__(self, "scales", scales)

    def __len__(self):
        return len(self.scales)

    def __iter__(self):
        return iter(self.scales)


def default_quadrature(order: int) -> int:
    return max(64, 8 * (order + 1))


def fit_chebyshev(
    target: Callable[[np.ndarray], np.ndarray],
    lambda_max: float,
    order: int,
    n_quadrature: int | None = None,
) -> ChebyshevFilter:
    """Fit c_k = 2/pi * int_0^pi cos(k t) g(a (cos t + 1)) dt by the trapezoidal rule."""
    if order < 0:
        raise ValueError("order must be non-negative")
    if n_quadrature is None:
        n_quadrature = default_quadrature(order)
    if n_quadrature < 4 * (order + 1):
        raise ValueError(f"n_quadrature must be at least {4 * (order + 1)}")
    a = lambda_max / 2.0
    theta = np.linspace(0.0, math.pi, n_quadrature)
    g = np.asarray(target(a * (np.cos(theta) + 1.0)), dtype=np.float64) * np.ones_like(theta)
    if not np.all(np.isfinite(g)):
        raise NumericError("target is not finite on [0, lambda_max]")
    w = np.full(n_quadrature, math.pi / (n_quadrature - 1))
    w[0] = w[-1] = w[0] / 2
    k = np.arange(order + 1)[:, None]
    coeffs = (2.0 / math.pi) * (np.cos(k * theta[None, :]) * g[None, :]) @ w
    return ChebyshevFilter(coeffs, lambda_max)


def chebyshev_series(coefficients: np.ndarray, y: np.ndarray) -> np.ndarray:
    """sum' c_k T_k(y) via the three-term recurrence (works outside [-1, 1])."""
    y = np.asarray(y, dtype=np.float64)
    c = coefficients
    out = 0.5 * c[0] * np.ones_like(y)
    if len(c) == 1:
        return out
    t_prev, t_cur = np.ones_like(y), y.copy()
    out = out + c[1] * t_cur
    for k in range(2, len(c)):
        t_prev, t_cur = t_cur, 2.0 * y * t_cur - t_prev
        out = out + c[k] * t_cur
    return out


def evaluate_filter(f: ChebyshevFilter, s: float, lam, clamp_mode: str = CLAMP):
    """Value of the rescaled filter lambda -> g(s * lambda)."""
    x = s * np.asarray(lam, dtype=np.float64)
    if clamp_mode == CLAMP:
        x = np.minimum(x, f.lambda_max)
    elif clamp_mode != EXTRAPOLATE:
        raise ValueError(f"unknown clamp mode {clamp_mode!r}")
    a = f.lambda_max / 2.0
    out = chebyshev_series(f.coefficients, (x - a) / a)
    return float(out) if np.ndim(out) == 0 else out


def effective_scale(f: ChebyshevFilter, s: float, lambda_hat: float, clamp_mode: str) -> float:
    """Operator-path scale: clamp mode caps s so that s * lambda_hat <= lambda_max(f)."""
    if clamp_mode == EXTRAPOLATE or lambda_hat <= 0:
        return s
    if clamp_mode != CLAMP:
        raise ValueError(f"unknown clamp mode {clamp_mode!r}")
    return min(s, f.lambda_max / lambda_hat)


def chebyshev_terms(L: SparseMatrix, scale: float, lambda_max: float, X: np.ndarray, order: int) -> list[np.ndarray]:
    """[T_0 X, ..., T_M X] for the shifted operator (scale * L - a I) / a.

    Costs exactly ``order`` sparse products with L.
    """
    a = lambda_max / 2.0
    m = L.scipy
    alpha = scale / a

    def shifted(v):
        return alpha * (m @ v) - v

    terms = [X]
    if order >= 1:
        terms.append(shifted(X))
    for _ in range(2, order + 1):
        terms.append(2.0 * shifted(terms[-1]) - terms[-2])
    return terms


def combine_terms(coefficients: np.ndarray, terms: Sequence[np.ndarray]) -> np.ndarray:
    out = 0.5 * coefficients[0] * terms[0]
    for c, t in zip(coefficients[1:], terms[1:]):
        out = out + c * t
    return out


def _check_operand(L: SparseMatrix, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if L.n_rows != L.n_cols:
        raise ValueError("operator must be square")
    if X.shape[0] != L.n_rows:
        raise ValueError(f"signal has {X.shape[0]} rows, operator has {L.n_rows}")
    return X


def apply_filter(
    f: ChebyshevFilter,
    s: float,
    L: SparseMatrix,
    X,
    clamp_mode: str = CLAMP,
    lambda_hat: float | None = None,
) -> np.ndarray:
    """g(sL) X through the Chebyshev recurrence.

    ``lambda_hat`` is the spectral estimate of L used by clamp mode; it is
    computed by power iteration when omitted.
    """
    X = _check_operand(L, X)
    if clamp_mode == CLAMP and lambda_hat is None:
        lambda_hat = estimate_lambda_max(L, "power_iteration")
    s_eff = effective_scale(f, s, lambda_hat or 0.0, clamp_mode)
    terms = chebyshev_terms(L, s_eff, f.lambda_max, X, f.order)
    return combine_terms(f.coefficients, terms)


def wavelet_vector(
    f: ChebyshevFilter, s: float, L: SparseMatrix, n: int, clamp_mode: str = CLAMP, lambda_hat: float | None = None
) -> np.ndarray:
    """psi_{s,n} = g(sL) delta_n."""
    if not 0 <= n < L.n_rows:
        raise IndexError(f"node {n} out of range for {L.n_rows} nodes")
    delta = np.zeros((L.n_rows, 1))
    delta[n, 0] = 1.0
    return apply_filter(f, s, L, delta, clamp_mode, lambda_hat)[:, 0]


def snapshot_filter_lambda(g: GraphSnapshot) -> float:
    """lambda_max for filters on this snapshot: a 1% margin over the estimate."""
    lam = g.lambda_max
    return LAMBDA_MARGIN * lam if lam > 0 else 1.0


@dataclass(frozen=True)
class FilterResponseTable:
    lambda_grid: np.ndarray
    scales: tuple[float, ...]
    responses: np.ndarray  # (J, len(grid))

    def to_csv(self) -> str:
        header = ",".join(["lambda"] + [f"s_{j + 1}" for j in range(len(self.scales))])
        lines = [header]
        for i, lam in enumerate(self.lambda_grid):
            row = [lam] + list(self.responses[:, i])
            lines.append(",".join(f"{v:.12g}" for v in row))
        return "\n".join(lines) + "\n"


def filter_response_table(f: ChebyshevFilter, scales: ScaleSet, n_grid: int = 101) -> FilterResponseTable:
    if n_grid < 2:
        raise ValueError("n_grid must be at least 2")
    grid = np.linspace(0.0, f.lambda_max, n_grid)
    resp = np.stack([evaluate_filter(f, s, grid, scales.clamp_mode) for s in scales])
    if not np.all(np.isfinite(resp)):
        raise NumericError("filter response is not finite")
    return FilterResponseTable(grid, scales.scales, resp)

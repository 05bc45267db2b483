"""Exact dense spectral oracle and empirical checks of the approximation lemmas.

Everything here diagonalizes the Laplacian densely, so it is restricted to
small graphs. It is the ground truth the Chebyshev path is measured against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .chebyshev import CLAMP, ChebyshevFilter, evaluate_filter
from .graph import EXACT_SIZE_LIMIT, DynamicGraph, SizeLimitError, SparseMatrix, build_laplacian

Response = Callable[[np.ndarray], np.ndarray]
# maps (previous desired response, frequencies) -> next desired response at those frequencies
MarkovFunctional = Callable[[Response, np.ndarray], np.ndarray]


class PreconditionError(ValueError):
    pass


def _require_size(n: int, limit: int = EXACT_SIZE_LIMIT):
    if n > limit:
        raise SizeLimitError(f"dense oracle limited to N <= {limit}, got N = {n}")


def _respond(response: Response, lam: np.ndarray) -> np.ndarray:
    return np.asarray(response(lam), dtype=np.float64) * np.ones_like(lam)


@dataclass(frozen=True)
class SpectralOracle:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @classmethod
    def from_laplacian(cls, L: SparseMatrix, limit: int = EXACT_SIZE_LIMIT) -> "SpectralOracle":
        _require_size(L.n_rows, limit)
        dense = L.to_dense()
        lam, U = np.linalg.eigh(dense)
        oracle = cls(lam, U)
        oracle.validate(dense)
        return oracle

    @classmethod
    def from_snapshot(cls, g, limit: int = EXACT_SIZE_LIMIT) -> "SpectralOracle":
        return cls.from_laplacian(build_laplacian(g), limit)

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def validate(self, dense_L: np.ndarray | None = None):
        U = self.eigenvectors
        if np.linalg.norm(U.T @ U - np.eye(self.n)) > 1e-8:
            raise PreconditionError("eigenvectors are not orthonormal")
        if np.any(self.eigenvalues < -1e-9):
            raise PreconditionError("Laplacian is not positive semi-definite")
        if dense_L is not None:
            resid = np.abs(dense_L @ U - U * self.eigenvalues).max(axis=0)
            if np.any(resid > 1e-7):
                raise PreconditionError("eigenpair residual too large")

    def spectral_operator(self, values: np.ndarray) -> np.ndarray:
        U = self.eigenvectors
        return (U * values) @ U.T


def exact_filter_apply(oracle: SpectralOracle, response: Response, s: float, X) -> np.ndarray:
    """U diag(response(s * lambda)) U^T X, the ground-truth filter."""
    _require_size(oracle.n)
    X = np.asarray(X, dtype=np.float64)
    U = oracle.eigenvectors
    g = _respond(response, s * oracle.eigenvalues)
    return U @ (g[:, None] * (U.T @ X)) if X.ndim == 2 else U @ (g * (U.T @ X))


def convolution_support(oracle: SpectralOracle, response: Response, s: float = 1.0) -> np.ndarray:
    _require_size(oracle.n)
    C = oracle.spectral_operator(_respond(response, s * oracle.eigenvalues))
    return 0.5 * (C + C.T)


def learned_support(oracle: SpectralOracle, f: ChebyshevFilter, s: float = 1.0, clamp_mode: str = CLAMP) -> np.ndarray:
    C = oracle.spectral_operator(evaluate_filter(f, s, oracle.eigenvalues, clamp_mode))
    return 0.5 * (C + C.T)


def approximation_error(
    f: ChebyshevFilter, s: float, oracle: SpectralOracle, response: Response, clamp_mode: str = CLAMP
) -> tuple[float, np.ndarray]:
    """(max error, per-eigenvalue errors) of the filter against the response on the spectrum."""
    lam = oracle.eigenvalues
    err = np.abs(evaluate_filter(f, s, lam, clamp_mode) - _respond(response, s * lam))
    return float(err.max()) if len(err) else 0.0, err


@dataclass(frozen=True)
class Lemma1Part2Report:
    t: int
    lhs: float
    rhs: float
    eps_ca: float
    holds: bool


@dataclass(frozen=True)
class Lemma1Part1Report:
    t: int
    lhs: float
    rhs: float
    rhs_statement: float
    previous_error: float
    eps_ca: float
    eps_fa: float
    holds: bool


def _oracles(graphs: DynamicGraph, limit: int) -> list[SpectralOracle]:
    _require_size(graphs.n_nodes, limit)
    return [SpectralOracle.from_snapshot(g, limit) for g in graphs.snapshots]


def lemma1_part2_check(
    graphs: DynamicGraph,
    desired: Sequence[Response],
    learned: Sequence[ChebyshevFilter],
    slack: float = 1e-9,
) -> list[Lemma1Part2Report]:
    """||C^a_{t+1} - C^a_t||_F <= ||C_{t+1} - C_t||_F + 2 sqrt(N) eps_ca for each consecutive pair."""
    oracles = _oracles(graphs, 500)
    if not (len(desired) == len(learned) == len(oracles)):
        raise ValueError("need one desired response and one learned filter per snapshot")
    n = graphs.n_nodes
    C = [convolution_support(o, r) for o, r in zip(oracles, desired)]
    Ca = [learned_support(o, f) for o, f in zip(oracles, learned)]
    errs = [approximation_error(f, 1.0, o, r)[0] for o, f, r in zip(oracles, learned, desired)]
    reports = []
    for t in range(len(oracles) - 1):
        eps = max(errs[t], errs[t + 1])
        lhs = float(np.linalg.norm(Ca[t + 1] - Ca[t]))
        rhs = float(np.linalg.norm(C[t + 1] - C[t])) + 2.0 * math.sqrt(n) * eps
        reports.append(Lemma1Part2Report(t, lhs, rhs, eps, lhs <= rhs + slack))
    return reports


def markov_responses(initial: Response, functional: MarkovFunctional, steps: int) -> list[Response]:
    """[G_0, G_1, ...] with G_{t+1} = functional(G_t, .)."""
    out = [initial]
    for _ in range(steps - 1):
        prev = out[-1]
        out.append(lambda lam, prev=prev: functional(prev, np.asarray(lam, dtype=np.float64)))
    return out


def filter_as_response(f: ChebyshevFilter) -> Response:
    return lambda lam: evaluate_filter(f, 1.0, lam)


def measure_eps_fa(
    oracle_next: SpectralOracle, filter_next: ChebyshevFilter, functional: MarkovFunctional, filter_prev: ChebyshevFilter
) -> float:
    """sqrt(N) * max |g^a_{t+1} - f(g^a_t)| over the spectrum at t+1."""
    lam = oracle_next.eigenvalues
    target = _respond(lambda x: functional(filter_as_response(filter_prev), x), lam)
    return math.sqrt(oracle_next.n) * float(np.abs(evaluate_filter(filter_next, 1.0, lam) - target).max())


def lemma1_part1_check(
    graphs: DynamicGraph,
    initial_response: Response,
    functional: MarkovFunctional,
    lipschitz: float,
    learned: Sequence[ChebyshevFilter],
    eps_fa: float | Sequence[float] | None = None,
    slack: float = 1e-9,
) -> list[Lemma1Part1Report]:
    """||C^a_{t+1} - C_{t+1}||_F <= Lip N^2 sqrt(||C^a_t - C_t||_F^2 + 2 eps_ca^2) + eps_fa.

    The looser form with 2 eps_ca^2 is the one the holds flag uses;
    ``rhs_statement`` reports the tighter variant without the factor 2.
    ``eps_fa`` defaults to the value measured by :func:`measure_eps_fa`.
    """
    oracles = _oracles(graphs, 200)
    T = len(oracles)
    if len(learned) != T:
        raise ValueError("need one learned filter per snapshot")
    desired = markov_responses(initial_response, functional, T)
    n = graphs.n_nodes
    errs = [approximation_error(f, 1.0, o, r)[0] for o, f, r in zip(oracles, learned, desired)]
    gaps = [
        float(np.linalg.norm(learned_support(o, f) - convolution_support(o, r)))
        for o, f, r in zip(oracles, learned, desired)
    ]
    reports = []
    for t in range(T - 1):
        if eps_fa is None:
            fa = measure_eps_fa(oracles[t + 1], learned[t + 1], functional, learned[t])
        elif np.ndim(eps_fa) == 0:
            fa = float(eps_fa)
        else:
            fa = float(eps_fa[t])
        eps = max(errs[t], errs[t + 1])
        scale = lipschitz * n**2
        rhs = scale * math.sqrt(gaps[t] ** 2 + 2 * eps**2) + fa
        rhs_statement = scale * math.sqrt(gaps[t] ** 2 + eps**2) + fa
        reports.append(Lemma1Part1Report(t, gaps[t + 1], rhs, rhs_statement, gaps[t], eps, fa, gaps[t + 1] <= rhs + slack))
    return reports


@dataclass(frozen=True)
class Lemma2Result:
    empirical_ratio: float
    predicted: float
    layers: int
    stop_reason: str

    @property
    def agrees(self) -> bool:
        return abs(self.empirical_ratio - self.predicted) <= 1e-3


def _abs_cos(x: np.ndarray, p: np.ndarray) -> float:
    return abs(float(x @ p)) / (np.linalg.norm(x) * np.linalg.norm(p))


def lemma2_ratio_check(
    oracle: SpectralOracle,
    response: Response,
    h,
    max_layers: int = 200,
    target_index: int = 0,
    tol: float = 1e-9,
) -> Lemma2Result:
    """Damping of |cos(C^l h, p_n)| per layer against G(lambda_n) / G(lambda_argmax).

    ``target_index`` picks p_n among eigenvalues in ascending order (0 is the
    smoothest eigenvector). The iterate C^l h is carried as a p_n component
    plus an orthogonal remainder, both in log scale, so the cosine stays
    resolvable long after it drops below machine epsilon.
    """
    if max_layers > 200:
        raise PreconditionError("max_layers is capped at 200")
    _require_size(oracle.n)
    lam, U = oracle.eigenvalues, oracle.eigenvectors
    G = _respond(response, lam)
    if np.any(G <= 0):
        raise PreconditionError("response must be positive on the spectrum")
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    p = U[:, target_index]
    alpha = float(h @ p)
    if abs(alpha) < 1e-12:
        raise PreconditionError("signal has no overlap with the target eigenvector")
    top = np.isclose(G, G.max(), rtol=1e-12, atol=0.0)
    if np.linalg.norm(U[:, top].T @ h) < 1e-12:
        raise PreconditionError("signal has no overlap with the dominant eigenspace")
    predicted = float(G[target_index] / G.max())

    C = oracle.spectral_operator(G)
    rest = h - alpha * p
    log_b = math.log(abs(alpha))
    rest_norm = np.linalg.norm(rest)
    if rest_norm == 0.0:
        return Lemma2Result(1.0, predicted, 0, "converged")
    log_r = math.log(rest_norm)
    rest = rest / rest_norm

    def log_cos():
        return -0.5 * np.logaddexp(0.0, 2.0 * (log_r - log_b))

    prev_log_cos = log_cos()
    ratio = prev_ratio = None
    reason = "max_layers"
    layers = 0
    for layers in range(1, max_layers + 1):
        # component along p scales by G(lambda_n); remainder goes through C with p projected out
        log_b += math.log(G[target_index])
        rest = C @ rest
        rest -= (rest @ p) * p
        nrm = np.linalg.norm(rest)
        if nrm == 0.0:
            ratio = 1.0 if ratio is None else ratio
            reason = "converged"
            break
        log_r += math.log(nrm)
        rest /= nrm
        cur = log_cos()
        prev_ratio, ratio = ratio, math.exp(cur - prev_log_cos)
        prev_log_cos = cur
        if prev_ratio is not None and abs(ratio - prev_ratio) < tol:
            reason = "converged"
            break
    return Lemma2Result(float(ratio), predicted, layers, reason)


def heat_kernel(tau: float = 1.0) -> Response:
    return lambda lam: np.exp(-tau * np.asarray(lam, dtype=np.float64))

"""Spectral diagnostics and convergence-bound curves for gossip mixing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DisconnectedGraphError, NonConvergenceError, RejectedInput

SYMMETRY_TOL = 1e-9
MAX_MIXING_ITERATIONS = 10**6


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: tuple
    lambda_2: float
    lambda_n: float
    rho_mixing: float
    laplacian_lambda_2: float
    rho_laplacian: float
    # rho < 1 fails (graph not connected)
    disconnected: bool


@dataclass(frozen=True)
class ConvergenceBound:
    """Inputs for the rate bounds. ``mu`` is carried as metadata only."""

    T: int
    n: int
    f0_minus_fstar: float = 1.0
    L_lipschitz: float = 1.0
    sigma: float = 1.0
    varsigma: float = 0.0
    mu: float = 0.0
    epsilon: float = 1e-3
    lambda_max: float = 0.5
    c: float = 1.0


def _mixing_matrix(W):
    W = getattr(W, "mixing", W)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise RejectedInput("mixing matrix must be square")
    if np.max(np.abs(W - W.T), initial=0.0) > SYMMETRY_TOL:
        raise RejectedInput("mixing matrix is not symmetric")
    return W


def spectral_report(W) -> SpectralReport:
    """Eigen-summary of a symmetric mixing matrix (or a ``TopologyGraph``).

    The Laplacian view is ``L = I - W``; ``rho_laplacian = 1 - lambda_2(L)``.
    """
    W = _mixing_matrix(W)
    n = W.shape[0]
    vals = np.linalg.eigvalsh(W)[::-1]  # descending
    if n == 1:
        return SpectralReport((float(vals[0]),), 0.0, 0.0, 0.0, 0.0, 1.0, False)
    lam2, lamn = float(vals[1]), float(vals[-1])
    rho = max(abs(lam2), abs(lamn)) ** 2
    lap = np.sort(1.0 - vals)
    lap2 = float(lap[1])
    return SpectralReport(
        eigenvalues=tuple(float(v) for v in vals),
        lambda_2=lam2,
        lambda_n=lamn,
        rho_mixing=float(rho),
        laplacian_lambda_2=lap2,
        rho_laplacian=1.0 - lap2,
        disconnected=bool(rho >= 1.0 - SYMMETRY_TOL),
    )


def eigen_residuals(W) -> np.ndarray:
    """``||W v - lambda v||`` for every eigenpair of the symmetric solver."""
    W = _mixing_matrix(W)
    vals, vecs = np.linalg.eigh(W)
    return np.linalg.norm(W @ vecs - vecs * vals, axis=0)


def averaging_time_bounds(epsilon: float, lam: float) -> tuple[float, float]:
    """``(0.5, 3) * log(1/epsilon) / log(1/lam)``."""
    if not 0.0 < epsilon < 1.0:
        raise RejectedInput("epsilon must lie in (0, 1)")
    if lam >= 1.0:
        raise DisconnectedGraphError("averaging time is undefined for lambda >= 1")
    if lam <= 0.0:
        raise RejectedInput("lambda must lie in (0, 1)")
    ratio = math.log(1.0 / epsilon) / math.log(1.0 / lam)
    return 0.5 * ratio, 3.0 * ratio


def dpsgd_rate_bound(b: ConvergenceBound) -> float:
    if b.T < 1 or b.n < 1:
        raise RejectedInput("T and n must be at least 1")
    gap = b.f0_minus_fstar
    return 8.0 * gap * b.L_lipschitz / b.T + (8.0 * gap + 4.0 * b.L_lipschitz) * b.sigma / math.sqrt(b.T * b.n)


def consensus_term(t_ave: float, lambda_max: float, c: float = 1.0) -> float:
    if not 0.0 < lambda_max < 1.0:
        raise RejectedInput("lambda_max must lie in (0, 1)")
    return math.exp(c * t_ave * math.log(lambda_max))


def bilayer_rate_bound(intra, inter, T: int, n: int, c: float = 1.0) -> float:
    """Unit-constant evaluation of the bilayer rate; ``intra``/``inter`` are ``(T_ave, lambda_max)``."""
    if T < 1 or n < 1:
        raise RejectedInput("T and n must be at least 1")
    return (1.0 / T + 1.0 / math.sqrt(n * T)
            + consensus_term(intra[0], intra[1], c)
            + consensus_term(inter[0], inter[1], c))


def consensus_error(vectors) -> float:
    """Mean squared distance from the unweighted mean; 0 for fewer than two entries.

    Accepts devices (anything with ``.params``), ``ParamVector``s or raw arrays.
    """
    rows = []
    for v in vectors:
        v = getattr(v, "params", v)
        v = getattr(v, "values", v)
        rows.append(np.atleast_1d(np.asarray(v, dtype=np.float64)))
    if len(rows) < 2:
        return 0.0
    X = np.array(rows)
    return float(((X - X.mean(axis=0)) ** 2).sum(axis=1).mean())


def mixing_trace(W, x0, steps: int) -> list[float]:
    """Consensus error of ``x <- W x`` for ``steps`` synchronous iterations."""
    W = _mixing_matrix(W)
    x = np.asarray(x0, dtype=np.float64).copy()
    out = [consensus_error(x)]
    for _ in range(steps):
        x = W @ x
        out.append(consensus_error(x))
    return out


def empirical_averaging_time(W, epsilon: float, seed, max_iterations: int = MAX_MIXING_ITERATIONS) -> int:
    """Iterations of ``x <- W x`` until the consensus error drops to ``epsilon^2`` of its start.

    The start is a seeded Gaussian scalar state rescaled to unit consensus error.
    """
    W = _mixing_matrix(W)
    n = W.shape[0]
    if n < 2:
        return 0
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    x = (x - x.mean()) / math.sqrt(consensus_error(x)) + x.mean()
    target = epsilon ** 2 * consensus_error(x)
    for t in range(1, max_iterations + 1):
        x = W @ x
        if consensus_error(x) <= target:
            return t
    raise NonConvergenceError(f"no {epsilon}-consensus within {max_iterations} iterations")

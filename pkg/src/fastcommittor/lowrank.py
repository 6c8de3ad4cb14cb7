"""Blocked randomly pivoted Cholesky over a lazily evaluated PSD matrix."""
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.linalg

from .errors import DegenerateMatrixError, InvalidArgumentError, NumericalBreakdownError

N_BLOCKS = 10
EPS_MACH = np.finfo(float).eps


class MatrixOracle(Protocol):
    """Entry lookup for an implicit symmetric PSD matrix."""

    size: int

    def diag(self) -> np.ndarray: ...

    def columns(self, idx: np.ndarray) -> np.ndarray: ...


class DenseOracle:
    """Oracle backed by an explicit matrix; used for testing and small problems."""

    def __init__(self, K):
        self.K = np.asarray(K, dtype=float)
        self.size = self.K.shape[0]
        self.calls = 0

    def diag(self):
        return np.diag(self.K).copy()

    def columns(self, idx):
        self.calls += 1
        return self.K[:, idx]


@dataclass
class LowRankFactor:
    """Pivots ``landmarks`` and factor F with ``K ~= F @ F.T``.

    ``columns`` holds the raw oracle columns ``K[:, landmarks]`` when they were
    requested; ``block_residuals`` is the residual trace after each block that
    ran and ``block_ranks`` the number of pivots accepted by then.
    """

    landmarks: np.ndarray
    factor: np.ndarray
    columns: np.ndarray | None = None
    residual_diag: np.ndarray | None = None
    block_residuals: list = field(default_factory=list)
    block_ranks: list = field(default_factory=list)

    @property
    def rank(self):
        return len(self.landmarks)


def rpcholesky(oracle, r, rng, keep_columns=False, tol=1e-13):
    """Randomly pivoted Cholesky in 10 blocks of ``r // 10`` proposals.

    Parameters
    ----------
    oracle : MatrixOracle
        Provides the diagonal and batches of columns of K.
    r : int
        Proposal budget, a positive multiple of 10.
    rng : numpy.random.Generator
        Owned by this call for its duration.
    keep_columns : bool
        Also return the raw columns ``K[:, S]`` (costs an extra N x r array).
    tol : float
        Stop early once the residual trace drops to ``tol * trace(K)``; the
        residual is then pure roundoff and pivots on it would be meaningless.

    Returns
    -------
    LowRankFactor
    """
    if not isinstance(r, (int, np.integer)) or r < 10 or r % 10:
        raise InvalidArgumentError(f"rank budget must be a positive multiple of 10, got {r}")
    n = oracle.size
    d = np.clip(np.asarray(oracle.diag(), dtype=float), 0.0, None)
    trace = d.sum()
    if not trace > 0:
        raise DegenerateMatrixError("matrix has zero trace")
    block = r // N_BLOCKS
    cap = min(r, n)
    F = np.zeros((n, cap))
    cols = np.zeros((n, cap)) if keep_columns else None
    selected = np.empty(cap, dtype=np.intp)
    k = 0
    residuals = []
    ranks = []
    for i in range(N_BLOCKS):
        total = d.sum()
        if total <= tol * trace:
            break
        proposals = rng.choice(n, size=block, p=d / total)
        new = np.unique(proposals)
        new = new[d[new] > 0]
        if new.size == 0:
            residuals.append(total)
            ranks.append(k)
            continue
        raw = np.asarray(oracle.columns(new), dtype=float)
        G = raw - F[:, :k] @ F[new, :k].T
        pivot = G[new]
        pivot = 0.5 * (pivot + pivot.T)
        pivot[np.diag_indices_from(pivot)] += EPS_MACH * np.trace(pivot)
        try:
            R = scipy.linalg.cholesky(pivot, lower=False)
        except np.linalg.LinAlgError:
            raise NumericalBreakdownError(
                f"pivot block {i} is not positive definite", block=i
            ) from None
        block_factor = scipy.linalg.solve_triangular(R, G.T, trans="T", lower=False).T
        m = new.size
        F[:, k : k + m] = block_factor
        if keep_columns:
            cols[:, k : k + m] = raw
        selected[k : k + m] = new
        k += m
        d -= np.einsum("ij,ij->i", block_factor, block_factor)
        np.clip(d, 0.0, None, out=d)
        d[new] = 0.0
        residuals.append(d.sum())
        ranks.append(k)
    return LowRankFactor(
        landmarks=selected[:k].copy(),
        factor=F[:, :k],
        columns=cols[:, :k] if keep_columns else None,
        residual_diag=d,
        block_residuals=residuals,
        block_ranks=ranks,
    )


def residual_trace(oracle, factor):
    """Sum over rows of ``max(0, K_nn - ||F[n]||^2)``."""
    diag = np.asarray(oracle.diag(), dtype=float)
    F = factor.factor
    if F.size == 0:
        return float(np.clip(diag, 0.0, None).sum())
    return float(np.clip(diag - np.einsum("ij,ij->i", F, F), 0.0, None).sum())

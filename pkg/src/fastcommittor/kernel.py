"""Mahalanobis exponential kernel restricted to the interior region.

The kernel between two states is ``exp(-||M^{1/2}(x - x')|| / eps)`` when both
states lie outside A and B, and zero otherwise.  Batch routines work on points
that have already been mapped through ``M^{1/2}``.
"""
from dataclasses import dataclass

import numba
import numpy as np

from .errors import DegenerateDataError, InvalidArgumentError
from .regions import OMEGA

SYMMETRY_TOL = 1e-12
EIG_CLAMP = 1e-12


def matrix_sqrt(M):
    """Symmetric PSD square root by eigendecomposition.

    Eigenvalues in ``[-1e-12 * trace(M), 0)`` are treated as roundoff and
    clamped to zero; anything more negative is rejected.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidArgumentError("matrix has non-finite entries")
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(M))):
        raise InvalidArgumentError("matrix is not symmetric")
    M = 0.5 * (M + M.T)
    vals, vecs = np.linalg.eigh(M)
    band = EIG_CLAMP * max(np.trace(M), 0.0)
    if vals.size and vals[0] < -band:
        raise InvalidArgumentError(f"matrix is not positive semidefinite (eigenvalue {vals[0]:.3e})")
    vals = np.clip(vals, 0.0, None)
    root = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (root + root.T)


class ScalingMatrix:
    """Immutable symmetric PSD matrix ``M`` with its cached square root."""

    __slots__ = ("_entries", "_sqrt")

    def __init__(self, entries):
        entries = np.array(entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1] or entries.shape[0] < 1:
            raise InvalidArgumentError(f"scaling matrix must be square, got shape {entries.shape}")
        sym = 0.5 * (entries + entries.T)
        root = matrix_sqrt(sym)
        sym.flags.writeable = False
        root.flags.writeable = False
        self._entries = sym
        self._sqrt = root

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim))

    @property
    def entries(self):
        return self._entries

    @property
    def sqrt(self):
        return self._sqrt

    @property
    def dim(self):
        return self._entries.shape[0]

    def trace(self):
        return float(np.trace(self._entries))

    def trace_fractions(self):
        """Diagonal of M divided by its trace, one value per coordinate."""
        return np.diag(self._entries) / np.trace(self._entries)

    def transform(self, points):
        """Map points (rows) through ``M^{1/2}``."""
        return np.asarray(points, dtype=float) @ self._sqrt

    def __mul__(self, c):
        return ScalingMatrix(self._entries * float(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return ScalingMatrix(self._entries / float(c))

    def __repr__(self):
        return f"ScalingMatrix(dim={self.dim}, trace={self.trace():.6g})"


@dataclass(frozen=True)
class KernelSpec:
    bandwidth: float
    scaling: ScalingMatrix

    def __post_init__(self):
        if not (self.bandwidth > 0 and np.isfinite(self.bandwidth)):
            raise InvalidArgumentError(f"bandwidth must be positive, got {self.bandwidth}")

    @property
    def dim(self):
        return self.scaling.dim


def _check_pair(x, xp, spec):
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if x.shape != (spec.dim,) or xp.shape != (spec.dim,):
        raise InvalidArgumentError(
            f"points must have shape ({spec.dim},), got {x.shape} and {xp.shape}"
        )
    return x, xp


def kernel_eval(x, x_region, xp, xp_region, spec):
    """Kernel value between two labelled states."""
    x, xp = _check_pair(x, xp, spec)
    if x_region != OMEGA or xp_region != OMEGA:
        return 0.0
    dist = np.linalg.norm(spec.scaling.sqrt @ (x - xp))
    return float(np.exp(-dist / spec.bandwidth))


def kernel_grad(x, x_region, xp, xp_region, spec):
    """Gradient of :func:`kernel_eval` with respect to ``x``.

    At coincident points the kernel is not differentiable; the zero vector is
    returned there as a pseudogradient.
    """
    x, xp = _check_pair(x, xp, spec)
    if x_region != OMEGA or xp_region != OMEGA:
        return np.zeros(spec.dim)
    diff = x - xp
    dist = np.linalg.norm(spec.scaling.sqrt @ diff)
    if dist == 0.0:
        return np.zeros(spec.dim)
    k = np.exp(-dist / spec.bandwidth)
    return -(k / (spec.bandwidth * dist)) * (spec.scaling.entries @ diff)


def trace_covariance(points, scaling=None):
    """Trace of the sample covariance (ddof=1) of ``M^{1/2} x`` over the rows x."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 2:
        raise InvalidArgumentError("need at least two points to form a covariance")
    cov = np.cov(points, rowvar=False, ddof=1).reshape(points.shape[1], points.shape[1])
    if scaling is None:
        return float(np.trace(cov))
    return float(np.sum(scaling.entries * cov))


def trace_cov_rescale(scaling, points):
    """Divide M by the trace covariance of the transformed points.

    Afterwards the points mapped through the returned matrix's square root have
    unit trace covariance.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != scaling.dim:
        raise InvalidArgumentError(f"points must have shape (N, {scaling.dim})")
    t = trace_covariance(points, scaling)
    if not t > 1e-300:
        raise DegenerateDataError("points have zero spread under the scaling matrix")
    return ScalingMatrix(scaling.entries / t)


# Batch routines on transformed points.  Distances are accumulated from
# coordinate differences so that coincident points give exactly zero.


@numba.njit(cache=True)
def _kernel_block(P, p_in, Q, q_in, inv_eps, out):
    n, d = P.shape
    m = Q.shape[0]
    for i in range(n):
        if not p_in[i]:
            for j in range(m):
                out[i, j] = 0.0
            continue
        for j in range(m):
            if not q_in[j]:
                out[i, j] = 0.0
                continue
            s = 0.0
            for k in range(d):
                t = P[i, k] - Q[j, k]
                s += t * t
            out[i, j] = np.exp(-np.sqrt(s) * inv_eps)


def kernel_matrix(P, p_regions, Q, q_regions, bandwidth):
    """Kernel values between rows of P and rows of Q (both already transformed)."""
    P = np.ascontiguousarray(P, dtype=float)
    Q = np.ascontiguousarray(Q, dtype=float)
    out = np.empty((P.shape[0], Q.shape[0]))
    _kernel_block(
        P, np.asarray(p_regions) == OMEGA, Q, np.asarray(q_regions) == OMEGA, 1.0 / bandwidth, out
    )
    return out


@numba.njit(cache=True)
def _paired_kernel(P, p_in, Q, q_in, inv_eps, out):
    n, d = P.shape
    for i in range(n):
        if not (p_in[i] and q_in[i]):
            out[i] = 0.0
            continue
        s = 0.0
        for k in range(d):
            t = P[i, k] - Q[i, k]
            s += t * t
        out[i] = np.exp(-np.sqrt(s) * inv_eps)


def paired_kernel(P, p_regions, Q, q_regions, bandwidth):
    """Kernel values between matching rows ``k(P[i], Q[i])``."""
    P = np.ascontiguousarray(P, dtype=float)
    Q = np.ascontiguousarray(Q, dtype=float)
    out = np.empty(P.shape[0])
    _paired_kernel(
        P, np.asarray(p_regions) == OMEGA, Q, np.asarray(q_regions) == OMEGA, 1.0 / bandwidth, out
    )
    return out

"""Numerical checks of the coefficient structure and of gradient isotropy.

``solve_full_system`` optimizes the unrestricted expansion with separate
coefficients on kernels centred at start points (c) and end points (d); the
optimum satisfies ``c + d = 0``, which is what licenses the difference-kernel
model.  ``isotropy_check`` whitens a set of gradients by the inverse square
root of their average outer product.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dataset import assemble_b
from .errors import IllConditionedError, InvalidArgumentError, RankDeficientError
from .kernel import kernel_matrix

MAX_FULL_N = 100


@dataclass
class FullSystemInstance:
    """Dense 2N x 2N block kernel system for a small dataset.

    ``K = [[K11, K12], [K21, K22]]`` with entries
    ``sqrt(w_m w_n) k(., .)`` between (x, x), (x, y), (y, x) and (y, y).
    """

    data: object
    spec: object
    gamma: float
    K: np.ndarray
    b: np.ndarray

    @classmethod
    def build(cls, data, spec, gamma):
        if data.count > MAX_FULL_N:
            raise InvalidArgumentError(f"dense verification is limited to N <= {MAX_FULL_N}")
        P = np.vstack([spec.scaling.transform(data.x), spec.scaling.transform(data.y)])
        regions = np.concatenate([data.x_region, data.y_region])
        sw = np.tile(np.sqrt(data.w), 2)
        K = kernel_matrix(P, regions, P, regions, spec.bandwidth) * np.outer(sw, sw)
        return cls(data, spec, float(gamma), K, assemble_b(data))

    @property
    def n(self):
        return self.data.count

    def objective(self, c, d):
        """Regularized least-squares loss of the two-coefficient expansion."""
        z = np.concatenate([c, d])
        Kz = self.K @ z
        res = Kz[: self.n] - Kz[self.n :] - self.b
        return float(res @ res / self.n + self.gamma * z @ Kz)

    def committor(self, c, d, x, x_region):
        """Evaluate ``sum_n sqrt(w_n) [c_n k(x_n, x) + d_n k(y_n, x)]``."""
        s = self.spec.scaling
        P = s.transform(np.atleast_2d(x))
        r = np.broadcast_to(np.atleast_1d(x_region), (P.shape[0],))
        sw = np.sqrt(self.data.w)
        kx = kernel_matrix(P, r, s.transform(self.data.x), self.data.x_region, self.spec.bandwidth)
        ky = kernel_matrix(P, r, s.transform(self.data.y), self.data.y_region, self.spec.bandwidth)
        return kx @ (sw * c) + ky @ (sw * d)


def solve_full_system(instance):
    """Solve ``[P P^T K + gamma N I] [c; d] = P b`` with ``P = [I; -I]``.

    Returns
    -------
    (c, d)
    """
    if not instance.gamma > 0:
        raise InvalidArgumentError("gamma must be positive")
    n = instance.n
    P = np.vstack([np.eye(n), -np.eye(n)])
    A = P @ (P.T @ instance.K) + instance.gamma * n * np.eye(2 * n)
    try:
        lu = scipy.linalg.lu_factor(A, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise IllConditionedError(f"full system factorization failed: {exc}") from None
    piv = np.abs(np.diag(lu[0]))
    if piv.min() <= np.finfo(float).eps * piv.max():
        raise IllConditionedError("full system is numerically singular", smallest_pivot=float(piv.min()))
    z = scipy.linalg.lu_solve(lu, P @ instance.b)
    return z[:n], z[n:]


def isotropy_check(gradients):
    """Whiten gradients by ``M^{-1/2}`` where ``M = (1/N) sum g g^T``.

    Returns
    -------
    (M, deviation)
        ``deviation`` is the spectral-norm distance of the whitened gradients'
        second moment from the identity.
    """
    G = np.asarray(gradients, dtype=float)
    if G.ndim != 2 or G.shape[0] < 1:
        raise InvalidArgumentError("gradients must be an (N, d) array")
    M = G.T @ G / G.shape[0]
    M = 0.5 * (M + M.T)
    vals, vecs = np.linalg.eigh(M)
    if vals[0] <= 1e-12 * np.trace(M):
        raise RankDeficientError(
            f"average gradient outer product is singular (smallest eigenvalue {vals[0]:.3e})"
        )
    inv_root = (vecs / np.sqrt(vals)) @ vecs.T
    H = G @ inv_root
    second = H.T @ H / G.shape[0]
    deviation = float(np.linalg.norm(second - np.eye(G.shape[1]), 2))
    return M, deviation



def random_instance(rng, n, dim=3, gamma=1e-6, regions=None):
    """Small seeded dataset with transitions into B, packaged as a full system."""
    from .dataset import TrajectoryDataset
    from .kernel import KernelSpec, ScalingMatrix
    from .regions import triple_well_regions

    regions = regions or triple_well_regions()
    x = rng.uniform(-1.5, 1.5, (n, dim))
    y = x + 0.3 * rng.standard_normal((n, dim))
    hit = rng.choice(n, size=max(1, n // 10), replace=False)
    y[hit, :2] = np.asarray(regions.b_center) + 0.1 * rng.uniform(-1, 1, (len(hit), 2))
    w = rng.uniform(0.5, 2.0, n)
    data = TrajectoryDataset.from_regions(x, y, w, regions)
    A = rng.standard_normal((dim, dim))
    spec = KernelSpec(1.0, ScalingMatrix(A @ A.T / dim + 0.1 * np.eye(dim)))
    return FullSystemInstance.build(data, spec, gamma)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def run_checks(seed=0, instances=20):
    """Seeded battery of coefficient-structure and isotropy checks."""
    rng = np.random.default_rng(seed)
    out = []
    worst_sum = worst_q = 0.0
    for _ in range(instances):
        n = int(rng.integers(10, 51))
        for gamma in (1e-6, 1e-2):
            inst = random_instance(rng, n, gamma=gamma)
            c, d = solve_full_system(inst)
            worst_sum = max(worst_sum, np.abs(c + d).max() / (1 + np.abs(c).max()))
            pts = rng.uniform(-1.5, 1.5, (20, inst.spec.dim))
            regions = np.zeros(20, dtype=np.int8)
            worst_q = max(worst_q, np.abs(inst.committor(c, d, pts, regions) - inst.committor(c, -c, pts, regions)).max())
    out.append(CheckResult("coefficients_cancel", worst_sum <= 1e-8, f"max |c+d|/(1+|c|) = {worst_sum:.3e}"))
    out.append(CheckResult("difference_model_matches", worst_q <= 1e-8, f"max |q_cd - q_theta| = {worst_q:.3e}"))

    x = rng.standard_normal((500, 5))
    _, dev = isotropy_check(x)
    out.append(CheckResult("isotropy_quadratic", dev <= 1e-10, f"deviation = {dev:.3e}"))
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    _, dev_q = isotropy_check(x @ Q.T)
    out.append(CheckResult("isotropy_orthogonal_invariance", abs(dev - dev_q) <= 1e-10, f"|change| = {abs(dev - dev_q):.3e}"))
    try:
        isotropy_check(np.outer(rng.standard_normal(50), [1.0, 2.0]))
        out.append(CheckResult("isotropy_rank_deficient", False, "no error for parallel gradients"))
    except RankDeficientError:
        out.append(CheckResult("isotropy_rank_deficient", True, "parallel gradients rejected"))
    return out

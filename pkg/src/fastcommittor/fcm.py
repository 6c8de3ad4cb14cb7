"""The fast committor machine.

The committor is modelled as ``q(x) = sum_i theta_i [k(x_i, x) - k(y_i, x)]``
on the interior, with 0 on A and 1 on B.  The coefficients live on a landmark
subset chosen by randomly pivoted Cholesky, and the kernel's scaling matrix is
refreshed from the average outer product of the model gradients.
"""
import itertools
import json
import time
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg

from . import __version__
from .dataset import assemble_b
from .errors import (
    DegenerateUpdateError,
    FCMError,
    FormatError,
    IllConditionedError,
    InvalidArgumentError,
)
from .kernel import KernelSpec, ScalingMatrix, kernel_eval, paired_kernel, trace_cov_rescale
from .lowrank import EPS_MACH, rpcholesky
from .regions import CHAR_LABELS, IN_B, LABEL_CHARS, OMEGA, as_labels

N_ITERATIONS = 5
DEFAULT_EPSILON = 1.0
DEFAULT_GAMMA = 1e-6
DEFAULT_RANK = 1000


@numba.njit(cache=True)
def _sqdist(P, i, Q, j):
    s = 0.0
    for k in range(P.shape[1]):
        t = P[i, k] - Q[j, k]
        s += t * t
    return s


@numba.njit(cache=True)
def _difference_columns(U, V, ou, ov, sw, idx, inv_eps, out):
    n = U.shape[0]
    for c in range(idx.shape[0]):
        j = idx[c]
        for m in range(n):
            acc = 0.0
            if ou[m]:
                if ou[j]:
                    acc += np.exp(-np.sqrt(_sqdist(U, m, U, j)) * inv_eps)
                if ov[j]:
                    acc -= np.exp(-np.sqrt(_sqdist(U, m, V, j)) * inv_eps)
            if ov[m]:
                if ou[j]:
                    acc -= np.exp(-np.sqrt(_sqdist(V, m, U, j)) * inv_eps)
                if ov[j]:
                    acc += np.exp(-np.sqrt(_sqdist(V, m, V, j)) * inv_eps)
            out[m, c] = sw[m] * sw[j] * acc


class DifferenceKernelOracle:
    """Lazy access to the weighted four-term kernel matrix of a dataset.

    ``K[m, n] = sqrt(w_m w_n) [k(x_m, x_n) - k(x_m, y_n) - k(y_m, x_n) + k(y_m, y_n)]``.
    """

    def __init__(self, data, spec):
        if spec.dim != data.dim:
            raise InvalidArgumentError(f"kernel dimension {spec.dim} != data dimension {data.dim}")
        self.data = data
        self.spec = spec
        self.size = data.count
        self.U = np.ascontiguousarray(spec.scaling.transform(data.x))
        self.V = np.ascontiguousarray(spec.scaling.transform(data.y))
        self.ou = data.x_region == OMEGA
        self.ov = data.y_region == OMEGA
        self.sw = np.sqrt(data.w)

    def diag(self):
        kxy = paired_kernel(self.U, self.data.x_region, self.V, self.data.y_region, self.spec.bandwidth)
        d = self.data.w * (self.ou.astype(float) + self.ov.astype(float) - 2.0 * kxy)
        return np.clip(d, 0.0, None)

    def columns(self, idx):
        idx = np.ascontiguousarray(idx, dtype=np.intp)
        out = np.empty((self.size, idx.shape[0]))
        _difference_columns(self.U, self.V, self.ou, self.ov, self.sw, idx, 1.0 / self.spec.bandwidth, out)
        return out


def kernel_entry(m, n, data, spec):
    """Single entry of the weighted four-term kernel matrix (reference form)."""
    x, y, r = data.x, data.y, (data.x_region, data.y_region)
    val = (
        kernel_eval(x[m], r[0][m], x[n], r[0][n], spec)
        - kernel_eval(x[m], r[0][m], y[n], r[1][n], spec)
        - kernel_eval(y[m], r[1][m], x[n], r[0][n], spec)
        + kernel_eval(y[m], r[1][m], y[n], r[1][n], spec)
    )
    return float(np.sqrt(data.w[m] * data.w[n]) * val)


def solve_restricted(K_cols, K_SS, b, gamma, N):
    """Coefficients of the landmark-restricted regularized least squares.

    Solves ``[K_cols^T K_cols + gamma N K_SS] eta = K_cols^T b`` by Cholesky
    after adding ``eps_mach * trace(K_SS)`` to the diagonal of ``K_SS``.
    """
    if not gamma > 0:
        raise InvalidArgumentError(f"gamma must be positive, got {gamma}")
    K_cols = np.asarray(K_cols, dtype=float)
    K_SS = np.array(K_SS, dtype=float)
    K_SS = 0.5 * (K_SS + K_SS.T)
    K_SS[np.diag_indices_from(K_SS)] += EPS_MACH * np.trace(K_SS)
    A = K_cols.T @ K_cols
    A += gamma * N * K_SS
    A = 0.5 * (A + A.T)
    rhs = K_cols.T @ np.asarray(b, dtype=float)
    try:
        factor = scipy.linalg.cho_factor(A, lower=False)
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(A)[0])
        raise IllConditionedError(
            f"normal equations are not positive definite (smallest eigenvalue {smallest:.3e})",
            smallest_pivot=smallest,
        ) from None
    return scipy.linalg.cho_solve(factor, rhs)


def restricted_objective(K_cols, K_SS, b, gamma, eta):
    """``(1/N) ||K_cols eta - b||^2 + gamma eta^T K_SS eta``."""
    res = K_cols @ eta - b
    return float(res @ res / len(b) + gamma * eta @ K_SS @ eta)


@numba.njit(cache=True)
def _landmark_sum(P, p_in, Lx, lx_in, Ly, ly_in, coef, inv_eps, out):
    for i in range(P.shape[0]):
        if not p_in[i]:
            out[i] = 0.0
            continue
        acc = 0.0
        for j in range(Lx.shape[0]):
            if lx_in[j]:
                acc += coef[j] * np.exp(-np.sqrt(_sqdist(P, i, Lx, j)) * inv_eps)
            if ly_in[j]:
                acc -= coef[j] * np.exp(-np.sqrt(_sqdist(P, i, Ly, j)) * inv_eps)
        out[i] = acc


@numba.njit(cache=True)
def _accumulate_grad(P, i, L, j, a, inv_eps, out):
    dist = np.sqrt(_sqdist(P, i, L, j))
    if dist == 0.0:
        return
    c = -a * inv_eps * np.exp(-dist * inv_eps) / dist
    for k in range(P.shape[1]):
        out[i, k] += c * (P[i, k] - L[j, k])


@numba.njit(cache=True)
def _landmark_grad(P, p_in, Lx, lx_in, Ly, ly_in, coef, inv_eps, out):
    for i in range(P.shape[0]):
        for k in range(P.shape[1]):
            out[i, k] = 0.0
        if not p_in[i]:
            continue
        for j in range(Lx.shape[0]):
            if lx_in[j]:
                _accumulate_grad(P, i, Lx, j, coef[j], inv_eps, out)
            if ly_in[j]:
                _accumulate_grad(P, i, Ly, j, -coef[j], inv_eps, out)


@dataclass
class FcmModel:
    """A fitted committor model.

    Holds the kernel (bandwidth and scaling matrix), the landmark indices into
    the training set, the coefficients ``eta`` and copies of the landmark pairs
    so that prediction does not need the training data.
    """

    spec: KernelSpec
    landmarks: np.ndarray
    eta: np.ndarray
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    x_region: np.ndarray
    y_region: np.ndarray

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=np.intp)
        self.eta = np.asarray(self.eta, dtype=float)
        self.x = np.asarray(self.x, dtype=float).reshape(-1, self.spec.dim)
        self.y = np.asarray(self.y, dtype=float).reshape(-1, self.spec.dim)
        self.w = np.asarray(self.w, dtype=float)
        k = len(self.landmarks)
        self.x_region = as_labels(self.x_region, k)
        self.y_region = as_labels(self.y_region, k)
        if self.eta.shape != (k,) or self.x.shape[0] != k or self.y.shape[0] != k or self.w.shape != (k,):
            raise InvalidArgumentError("landmark arrays and coefficients disagree in length")
        if np.any(self.landmarks < 0):
            raise InvalidArgumentError("landmark indices must be nonnegative")
        sq = self.spec.scaling
        self._lx = np.ascontiguousarray(sq.transform(self.x))
        self._ly = np.ascontiguousarray(sq.transform(self.y))
        self._coef = self.eta * np.sqrt(self.w)

    @classmethod
    def from_landmarks(cls, spec, data, landmarks, eta):
        s = np.asarray(landmarks, dtype=np.intp)
        return cls(spec, s, eta, data.x[s], data.y[s], data.w[s], data.x_region[s], data.y_region[s])

    @property
    def dim(self):
        return self.spec.dim

    @property
    def bandwidth(self):
        return self.spec.bandwidth

    @property
    def scaling(self):
        return self.spec.scaling

    @property
    def theta(self):
        """Coefficients multiplying the landmark kernel differences."""
        return self._coef

    def _points(self, x, x_region):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        P = np.atleast_2d(x)
        if P.ndim != 2 or P.shape[1] != self.dim:
            raise InvalidArgumentError(f"points must have {self.dim} coordinates, got shape {x.shape}")
        regions = np.broadcast_to(as_labels(np.atleast_1d(x_region)), (P.shape[0],))
        return single, P, regions

    def predict(self, x, x_region):
        """Committor estimate at one point (shape (d,)) or many (shape (n, d))."""
        single, P, regions = self._points(x, x_region)
        out = np.empty(P.shape[0])
        inside = regions == OMEGA
        _landmark_sum(
            np.ascontiguousarray(self.scaling.transform(P)), inside,
            self._lx, self.x_region == OMEGA, self._ly, self.y_region == OMEGA,
            self._coef, 1.0 / self.bandwidth, out,
        )
        out[regions == IN_B] = 1.0
        return float(out[0]) if single else out

    def predict_grad(self, x, x_region):
        """Gradient of the interior branch; zero on A and B."""
        single, P, regions = self._points(x, x_region)
        g = np.empty(P.shape)
        _landmark_grad(
            np.ascontiguousarray(self.scaling.transform(P)), regions == OMEGA,
            self._lx, self.x_region == OMEGA, self._ly, self.y_region == OMEGA,
            self._coef, 1.0 / self.bandwidth, g,
        )
        g = g @ self.scaling.sqrt
        return g[0] if single else g

    __call__ = predict


def predict(model, x, x_region):
    return model.predict(x, x_region)


def predict_grad(model, x, x_region):
    return model.predict_grad(x, x_region)


def update_scaling(model, data):
    """Average gradient outer product ``(1/N) sum_n g_n g_n^T`` at the start points."""
    G = model.predict_grad(data.x, data.x_region)
    if not np.any(G):
        raise DegenerateUpdateError("all model gradients vanish")
    return ScalingMatrix(G.T @ G / data.count)


def empirical_loss(q, data):
    """Weighted mean squared increment ``(1/N) sum_n w_n (q(x_n) - q(y_n))^2``."""
    dq = np.asarray(q(data.x, data.x_region), dtype=float) - np.asarray(q(data.y, data.y_region), dtype=float)
    return float(np.mean(data.w * dq * dq))


@dataclass
class IterationRecord:
    iteration: int
    validation_loss: float
    trace_fractions: np.ndarray
    residual_trace: float
    rank: int
    seconds: float
    scaling: ScalingMatrix


@dataclass
class FitReport:
    """Per-iteration diagnostics of :func:`fit`.

    ``final_scaling`` is the matrix produced by the last gradient update,
    rescaled to unit trace covariance on the training start points.
    """

    iterations: list = field(default_factory=list)
    final_scaling: ScalingMatrix | None = None
    seconds: float = 0.0
    params: dict = field(default_factory=dict)


def fit(data, epsilon=DEFAULT_EPSILON, gamma=DEFAULT_GAMMA, rank=DEFAULT_RANK, seed=0,
        validation=None, n_iterations=N_ITERATIONS):
    """Train the committor model.

    Each iteration rescales M to unit trace covariance, selects landmarks by
    randomly pivoted Cholesky on the weighted difference kernel, solves for the
    coefficients and refreshes M from the model gradients.  The validation
    loss in the report is measured on ``validation`` when given, else on the
    training pairs.

    Returns
    -------
    (FcmModel, FitReport)
    """
    if not gamma > 0:
        raise InvalidArgumentError(f"gamma must be positive, got {gamma}")
    if not isinstance(rank, (int, np.integer)) or rank < 10 or rank % 10:
        raise InvalidArgumentError(f"rank must be a positive multiple of 10, got {rank}")
    rng = np.random.default_rng(seed)
    b = assemble_b(data)
    M = ScalingMatrix.identity(data.dim)
    report = FitReport(params={"epsilon": epsilon, "gamma": gamma, "rank": rank, "seed": seed})
    model = None
    for t in range(1, n_iterations + 1):
        tick = time.perf_counter()
        M = trace_cov_rescale(M, data.x)
        spec = KernelSpec(epsilon, M)
        oracle = DifferenceKernelOracle(data, spec)
        factor = rpcholesky(oracle, rank, rng, keep_columns=True)
        S = factor.landmarks
        eta = solve_restricted(factor.columns, factor.columns[S], b, gamma, data.count)
        model = FcmModel.from_landmarks(spec, data, S, eta)
        resid = float(factor.residual_diag.sum())
        del factor, oracle
        try:
            M = update_scaling(model, data)
        except DegenerateUpdateError:
            pass
        seconds = time.perf_counter() - tick
        report.seconds += seconds
        loss = empirical_loss(model, validation if validation is not None else data)
        report.iterations.append(
            IterationRecord(t, loss, spec.scaling.trace_fractions(), resid, len(S), seconds, spec.scaling)
        )
    report.final_scaling = trace_cov_rescale(M, data.x)
    return model, report


@dataclass
class SearchResult:
    epsilon: float
    gamma: float
    rank: int
    loss: float
    table: list

    @property
    def best(self):
        return self.epsilon, self.gamma, self.rank


def grid_search(data, epsilons, gammas, ranks, seed=0, holdout=0.2):
    """Pick (epsilon, gamma, rank) minimizing the validation loss.

    The data are split by a seeded shuffle with ``holdout`` of the pairs kept
    for validation.  Cells whose fit fails are recorded with infinite loss.
    Ties go to the larger gamma, then the smaller rank.
    """
    grids = [list(epsilons), list(gammas), list(ranks)]
    if not all(grids):
        raise InvalidArgumentError("hyperparameter grids must be nonempty")
    train, val = data.split(holdout, seed)
    table = []
    for eps, gam, r in itertools.product(*grids):
        try:
            model, _ = fit(train, eps, gam, r, seed=seed)
            loss, status = empirical_loss(model, val), "ok"
        except FCMError as exc:
            loss, status = float("inf"), f"{type(exc).__name__}: {exc}"
        table.append({"epsilon": eps, "gamma": gam, "rank": r, "loss": loss, "status": status})
    best = min(table, key=lambda row: (row["loss"], -row["gamma"], row["rank"]))
    return SearchResult(best["epsilon"], best["gamma"], best["rank"], best["loss"], table)


MODEL_MAGIC = "FCM1"


def _join(vals):
    return ",".join(repr(float(v)) for v in vals)


def write_model(path, model, config=None):
    """Text record: magic line, key=value lines, then one row per landmark pair."""
    lines = [
        MODEL_MAGIC,
        f"version={__version__}",
        f"config={json.dumps(config or {}, sort_keys=True)}",
        f"d={model.dim}",
        f"epsilon={model.bandwidth!r}",
        f"n={len(model.landmarks)}",
        "M=" + _join(model.scaling.entries.ravel()),
        "landmarks=" + ",".join(str(int(s)) for s in model.landmarks),
        "eta=" + _join(model.eta),
    ]
    for i in range(len(model.landmarks)):
        lines.append(
            _join(np.concatenate([model.x[i], model.y[i], [model.w[i]]]))
            + f",{LABEL_CHARS[int(model.x_region[i])]},{LABEL_CHARS[int(model.y_region[i])]}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_model(path):
    """Inverse of :func:`write_model`; returns ``(model, config)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise FormatError(f"{path}: not an {MODEL_MAGIC} model file")
    try:
        head = dict(ln.split("=", 1) for ln in lines[1:9])
        d = int(head["d"])
        n = int(head["n"])
        eps = float(head["epsilon"])
        config = json.loads(head["config"])
        M = np.array([float(v) for v in head["M"].split(",")]).reshape(d, d)
        S = [int(v) for v in head["landmarks"].split(",")] if n else []
        eta = [float(v) for v in head["eta"].split(",")] if n else []
        rows = lines[9 : 9 + n]
        if len(rows) != n:
            raise FormatError(f"{path}: expected {n} landmark rows, found {len(rows)}")
        x = np.empty((n, d))
        y = np.empty((n, d))
        w = np.empty(n)
        xr = np.empty(n, dtype=np.int8)
        yr = np.empty(n, dtype=np.int8)
        for i, ln in enumerate(rows):
            parts = ln.split(",")
            if len(parts) != 2 * d + 3:
                raise FormatError(f"{path}: landmark row {i + 1} is malformed")
            vals = [float(p) for p in parts[: 2 * d + 1]]
            x[i], y[i], w[i] = vals[:d], vals[d : 2 * d], vals[2 * d]
            xr[i] = CHAR_LABELS[parts[-2]]
            yr[i] = CHAR_LABELS[parts[-1]]
        model = FcmModel(KernelSpec(eps, ScalingMatrix(M)), S, eta, x, y, w, xr, yr)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: corrupt model file ({exc})") from None
    return model, config

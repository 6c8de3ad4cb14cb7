"""Reference committor for the triple-well system.

The committor depends only on the first two coordinates, so it solves the
planar backward Kolmogorov problem ``beta^-1 Lap q - grad V0 . grad q = 0`` with
q = 0 on A and q = 1 on B.  A finite-difference solver on a box provides the
field; a Monte Carlo hitting-probability estimator serves as an independent
check.
"""
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from scipy.interpolate import RegularGridInterpolator

from . import __version__
from .dynamics import three_well_grad
from .errors import FormatError, InvalidArgumentError, InvalidRegionError, NonconvergenceError
from .regions import IN_A, IN_B, LABEL_CHARS, CHAR_LABELS, OMEGA

DEFAULT_BOUNDS = (-2.5, 2.5, -1.5, 2.5)
DEFAULT_SHAPE = (401, 321)
EXTERIOR = 3


@dataclass
class ReferenceField:
    """Committor values on a regular grid; ``values[i, j]`` sits at ``(u_i, v_j)``."""

    bounds: tuple
    values: np.ndarray
    mask: np.ndarray
    residual: float = 0.0

    @property
    def shape(self):
        return self.values.shape

    @property
    def u(self):
        return np.linspace(self.bounds[0], self.bounds[1], self.values.shape[0])

    @property
    def v(self):
        return np.linspace(self.bounds[2], self.bounds[3], self.values.shape[1])

    def contains(self, uv):
        uv = np.atleast_2d(uv)
        u0, u1, v0, v1 = self.bounds
        return (uv[:, 0] >= u0) & (uv[:, 0] <= u1) & (uv[:, 1] >= v0) & (uv[:, 1] <= v1)

    def __call__(self, uv):
        """Bilinear interpolation at planar points (rows of ``uv``)."""
        interp = RegularGridInterpolator((self.u, self.v), self.values, method="linear")
        return interp(np.atleast_2d(uv))

    def node_value(self, u, v):
        """Value at the grid node nearest to (u, v)."""
        i = int(round((u - self.bounds[0]) / (self.bounds[1] - self.bounds[0]) * (self.shape[0] - 1)))
        j = int(round((v - self.bounds[2]) / (self.bounds[3] - self.bounds[2]) * (self.shape[1] - 1)))
        return float(self.values[i, j])


def _planar_balls(regions):
    if not hasattr(regions, "a_center"):
        raise InvalidArgumentError("reference solver needs disc-shaped regions")
    return (
        (np.asarray(regions.a_center, float), float(regions.a_radius)),
        (np.asarray(regions.b_center, float), float(regions.b_radius)),
    )


def _crossing(p, step, center, radius):
    """Fraction s in (0, 1] such that ``p + s * step`` lies on the circle."""
    d = p - center
    a = step @ step
    b = 2 * d @ step
    c = d @ d - radius * radius
    disc = max(b * b - 4 * a * c, 0.0)
    s = (-b - np.sqrt(disc)) / (2 * a)
    return min(max(s, 1e-12), 1.0)


def solve_reference(regions, beta=2.0, bounds=DEFAULT_BOUNDS, shape=DEFAULT_SHAPE, grad=three_well_grad):
    """Finite-difference committor on a box.

    Central differences in the interior, reflecting (zero normal derivative)
    ghost nodes at the box edges, and shortened stencil arms where a grid line
    crosses the boundary of A or B so the Dirichlet data are imposed on the
    true circles.  The sparse system is solved directly.
    """
    u0, u1, v0, v1 = map(float, bounds)
    nu, nv = map(int, shape)
    if nu < 3 or nv < 3 or not (u1 > u0 and v1 > v0):
        raise InvalidArgumentError("grid needs positive extent and at least 3 nodes per axis")
    (ca, ra), (cb, rb) = _planar_balls(regions)
    u = np.linspace(u0, u1, nu)
    v = np.linspace(v0, v1, nv)
    hu = (u1 - u0) / (nu - 1)
    hv = (v1 - v0) / (nv - 1)
    U, V = np.meshgrid(u, v, indexing="ij")
    in_a = (U - ca[0]) ** 2 + (V - ca[1]) ** 2 <= ra * ra
    in_b = (U - cb[0]) ** 2 + (V - cb[1]) ** 2 <= rb * rb
    if not in_a.any() or not in_b.any():
        raise InvalidRegionError("A or B contains no grid node")
    mask = np.full((nu, nv), OMEGA, dtype=np.int8)
    mask[in_a] = IN_A
    mask[in_b] = IN_B
    free = mask == OMEGA
    index = -np.ones((nu, nv), dtype=np.int64)
    index[free] = np.arange(free.sum())
    gu, gv = grad(U, V)
    diff = 1.0 / beta

    rows, cols, vals = [], [], []
    rhs = np.zeros(free.sum())
    fi, fj = np.nonzero(free)
    for axis, h, drift in ((0, hu, -gu), (1, hv, -gv)):
        n_axis = nu if axis == 0 else nv
        pos = fi if axis == 0 else fj
        hl = np.full(pos.shape, h)
        hr = np.full(pos.shape, h)
        val_l = np.full(pos.shape, np.nan)
        val_r = np.full(pos.shape, np.nan)
        for side, hside, vside in ((-1, hl, val_l), (1, hr, val_r)):
            npos = pos + side
            inside = (npos >= 0) & (npos < n_axis)
            ni = np.where(axis == 0, npos, fi)
            nj = np.where(axis == 1, npos, fj)
            ni_c = np.clip(ni, 0, nu - 1)
            nj_c = np.clip(nj, 0, nv - 1)
            nmask = np.where(inside, mask[ni_c, nj_c], OMEGA)
            for k in np.nonzero(nmask != OMEGA)[0]:
                p = np.array([u[fi[k]], v[fj[k]]])
                step = np.zeros(2)
                step[axis] = side * h
                c, r, q = (ca, ra, 0.0) if nmask[k] == IN_A else (cb, rb, 1.0)
                hside[k] = _crossing(p, step, c, r) * h
                vside[k] = q
        # reflecting edges: ghost node mirrors the interior neighbour
        lo = pos == 0
        hi = pos == n_axis - 1
        a = drift[fi, fj]
        denom = hl * hr * (hl + hr)
        c_r = (2 * diff * hl + a * hl * hl) / denom
        c_l = (2 * diff * hr - a * hr * hr) / denom
        c_r = np.where(lo, 2 * diff / (h * h), np.where(hi, 0.0, c_r))
        c_l = np.where(hi, 2 * diff / (h * h), np.where(lo, 0.0, c_l))
        c_0 = -(c_r + c_l)
        c_0 = np.where(lo | hi, -2 * diff / (h * h), c_0)
        own = index[fi, fj]
        rows.append(own)
        cols.append(own)
        vals.append(c_0)
        for side, coef, vside in ((-1, c_l, val_l), (1, c_r, val_r)):
            npos = pos + side
            ok = (npos >= 0) & (npos < n_axis) & (coef != 0)
            dirichlet = ok & ~np.isnan(vside)
            rhs[own[dirichlet]] -= coef[dirichlet] * vside[dirichlet]
            link = ok & np.isnan(vside)
            ni = np.where(axis == 0, npos, fi)[link]
            nj = np.where(axis == 1, npos, fj)[link]
            rows.append(own[link])
            cols.append(index[ni, nj])
            vals.append(coef[link])
    n = free.sum()
    A = scipy.sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    q = scipy.sparse.linalg.spsolve(A.tocsc(), rhs)
    scale = abs(A).max() * max(np.abs(q).max(), 1.0) + np.abs(rhs).max()
    residual = float(np.abs(A @ q - rhs).max() / scale)
    if residual > 1e-10:
        raise NonconvergenceError(f"reference solve residual {residual:.3e} exceeds 1e-10")
    values = np.zeros((nu, nv))
    values[in_b] = 1.0
    values[free] = np.clip(q, 0.0, 1.0)
    return ReferenceField((u0, u1, v0, v1), values, mask, residual)


@numba.njit(cache=True)
def _hit_b_first(x0, dt, beta, ca0, ca1, ra2, cb0, cb1, rb2, max_steps, rng):
    """1 if the path hits B first, 0 if A first, -1 if capped."""
    d = x0.shape[0]
    x = x0.copy()
    scale = np.sqrt(2 * dt / beta)
    for _ in range(max_steps):
        u = x[0]
        v = x[1]
        e1 = np.exp(-u * u - (v - 1 / 3) ** 2)
        e2 = np.exp(-u * u - (v - 5 / 3) ** 2)
        e3 = np.exp(-(u - 1) ** 2 - v * v)
        e4 = np.exp(-(u + 1) ** 2 - v * v)
        gu = -6 * u * e1 + 6 * u * e2 + 10 * (u - 1) * e3 + 10 * (u + 1) * e4 + 0.8 * u**3
        gv = (
            -6 * (v - 1 / 3) * e1 + 6 * (v - 5 / 3) * e2 + 10 * v * e3 + 10 * v * e4
            + 0.8 * (v - 1 / 3) ** 3
        )
        x[0] = u - gu * dt + scale * rng.standard_normal()
        x[1] = v - gv * dt + scale * rng.standard_normal()
        for i in range(2, d):
            x[i] = x[i] - 4.0 * x[i] * dt + scale * rng.standard_normal()
        if (x[0] - cb0) ** 2 + (x[1] - cb1) ** 2 <= rb2:
            return 1
        if (x[0] - ca0) ** 2 + (x[1] - ca1) ** 2 <= ra2:
            return 0
    return -1


@numba.njit(cache=True)
def _hit_many(x0, n_traj, dt, beta, ca0, ca1, ra2, cb0, cb1, rb2, max_steps, rng):
    out = np.empty(n_traj, dtype=np.int8)
    for k in range(n_traj):
        out[k] = _hit_b_first(x0, dt, beta, ca0, ca1, ra2, cb0, cb1, rb2, max_steps, rng)
    return out


@dataclass
class MCEstimate:
    estimate: float
    stderr: float
    n_used: int
    n_capped: int

    def __float__(self):
        return self.estimate


def mc_committor(x0, regions, beta, n_traj, dt, rng, max_steps=10_000_000):
    """Fraction of Euler-Maruyama paths from ``x0`` that reach B before A.

    ``x0`` may be planar or full 10-dimensional (nuisance coordinates are then
    simulated too).  Paths exceeding ``max_steps`` are dropped and counted in
    ``n_capped``.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 1 or x0.shape[0] < 2:
        raise InvalidArgumentError("start point must be a vector with at least 2 coordinates")
    if regions.label(x0) != OMEGA:
        raise InvalidArgumentError("start point must lie outside A and B")
    (ca, ra), (cb, rb) = _planar_balls(regions)
    hits = _hit_many(
        x0, int(n_traj), float(dt), float(beta), ca[0], ca[1], ra * ra, cb[0], cb[1], rb * rb,
        int(max_steps), rng,
    )
    used = hits >= 0
    n_used = int(used.sum())
    if n_used == 0:
        raise NonconvergenceError(f"all {n_traj} trajectories hit the step cap")
    p = float(hits[used].mean())
    return MCEstimate(p, float(np.sqrt(p * (1 - p) / n_used)), n_used, int(n_traj - n_used))


@dataclass
class MSEResult:
    weighted: float
    unweighted: float
    n_used: int
    n_excluded: int


def evaluate_mse(model, data, field, coords=(0, 1)):
    """Squared error of the model against the reference at interior start points.

    The weighted variant normalizes the importance weights of the points used
    to sum to one.  Points outside the grid are excluded and counted.
    """
    interior = data.x_region == OMEGA
    x = data.x[interior]
    w = data.w[interior]
    uv = x[:, list(coords)]
    ok = field.contains(uv)
    n_excl = int((~ok).sum())
    x, w, uv = x[ok], w[ok], uv[ok]
    if len(x) == 0:
        return MSEResult(float("nan"), float("nan"), 0, n_excl)
    q = model(x, np.full(len(x), OMEGA, dtype=np.int8)) if callable(model) else model
    err = (np.asarray(q) - field(uv)) ** 2
    return MSEResult(float(np.sum(w * err) / np.sum(w)), float(err.mean()), len(x), n_excl)


def write_field(path, field, config=None):
    """CSV: a header line, then ``n_u`` rows of values and ``n_u`` rows of node labels."""
    u0, u1, v0, v1 = field.bounds
    nu, nv = field.shape
    cfg = ";".join(f"{k}:{v}" for k, v in sorted((config or {}).items()))
    with open(path, "w") as fh:
        fh.write(
            f"u_min={u0!r},u_max={u1!r},v_min={v0!r},v_max={v1!r},n_u={nu},n_v={nv},"
            f"residual={field.residual!r},version={__version__},config={cfg}\n"
        )
        for row in field.values.tolist():
            fh.write(",".join(map(repr, row)) + "\n")
        for row in field.mask.tolist():
            fh.write(",".join(LABEL_CHARS.get(c, "X") for c in row) + "\n")


def read_field(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    try:
        head = dict(part.split("=", 1) for part in lines[0].split(",config=")[0].split(","))
        nu, nv = int(head["n_u"]), int(head["n_v"])
        bounds = tuple(float(head[k]) for k in ("u_min", "u_max", "v_min", "v_max"))
        values = np.array([[float(t) for t in ln.split(",")] for ln in lines[1 : 1 + nu]])
        labels = {**CHAR_LABELS, "X": EXTERIOR}
        mask = np.array([[labels[t] for t in ln.split(",")] for ln in lines[1 + nu : 1 + 2 * nu]], dtype=np.int8)
        residual = float(head.get("residual", 0.0))
    except (IndexError, KeyError, ValueError) as exc:
        raise FormatError(f"{path}: corrupt reference file ({exc})") from None
    if values.shape != (nu, nv) or mask.shape != (nu, nv):
        raise FormatError(f"{path}: grid is not {nu} x {nv}")
    return ReferenceField(bounds, values, mask, residual)

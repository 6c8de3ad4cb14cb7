"""Overdamped Langevin dynamics in the 10-dimensional triple-well potential.

The potential is ``V(x) = V0(x1, x2) + 2 * sum_{i>=3} x_i**2`` where V0 is the
three-hole potential

    V0(u, v) = 3 exp(-u^2 - (v - 1/3)^2) - 3 exp(-u^2 - (v - 5/3)^2)
               - 5 exp(-(u - 1)^2 - v^2) - 5 exp(-(u + 1)^2 - v^2)
               + 0.2 u^4 + 0.2 (v - 1/3)^4

with minima near (+-1, 0) and (0, 1.54).
"""
from dataclasses import dataclass

import numba
import numpy as np

from . import __version__
from .dataset import TrajectoryDataset
from .errors import InvalidArgumentError, SimulationBlowupError

NUISANCE_STIFFNESS = 2.0


@dataclass(frozen=True)
class PotentialSpec:
    name: str = "triple_well_10d"
    beta: float = 2.0
    beta_s: float = 1.0
    dim: int = 10

    def __post_init__(self):
        if self.name != "triple_well_10d":
            raise InvalidArgumentError(f"unknown potential {self.name!r}")
        if not (self.beta > 0 and self.beta_s > 0):
            raise InvalidArgumentError("inverse temperatures must be positive")
        if self.dim < 2:
            raise InvalidArgumentError("triple-well potential needs at least 2 coordinates")


@dataclass(frozen=True)
class SimulationPlan:
    """Time step, lag, sample spacing and burn-in (all in time units) and size."""

    n_samples: int
    dt: float = 1e-3
    tau: float = 1e-2
    spacing: float = 1e-1
    burn_in: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise InvalidArgumentError("need at least one sample")
        if not self.dt > 0:
            raise InvalidArgumentError("dt must be positive")
        for name in ("tau", "spacing", "burn_in"):
            self._steps(getattr(self, name), name, allow_zero=name == "burn_in")

    def _steps(self, t, name, allow_zero=False):
        k = int(round(t / self.dt))
        if abs(k * self.dt - t) > 1e-9 * max(abs(t), self.dt) or (k < 1 and not allow_zero):
            raise InvalidArgumentError(f"{name}={t} is not a positive integer multiple of dt={self.dt}")
        return k

    @property
    def lag_steps(self):
        return self._steps(self.tau, "tau")

    @property
    def spacing_steps(self):
        return self._steps(self.spacing, "spacing")

    @property
    def burn_in_steps(self):
        return self._steps(self.burn_in, "burn_in", allow_zero=True)


def three_well(u, v):
    """The planar potential V0, vectorized."""
    e1 = np.exp(-u * u - (v - 1 / 3) ** 2)
    e2 = np.exp(-u * u - (v - 5 / 3) ** 2)
    e3 = np.exp(-(u - 1) ** 2 - v * v)
    e4 = np.exp(-(u + 1) ** 2 - v * v)
    return 3 * e1 - 3 * e2 - 5 * e3 - 5 * e4 + 0.2 * u**4 + 0.2 * (v - 1 / 3) ** 4


def three_well_grad(u, v):
    """Partial derivatives (dV0/du, dV0/dv), vectorized."""
    e1 = np.exp(-u * u - (v - 1 / 3) ** 2)
    e2 = np.exp(-u * u - (v - 5 / 3) ** 2)
    e3 = np.exp(-(u - 1) ** 2 - v * v)
    e4 = np.exp(-(u + 1) ** 2 - v * v)
    du = (
        -6 * u * e1 + 6 * u * e2 + 10 * (u - 1) * e3 + 10 * (u + 1) * e4 + 0.8 * u**3
    )
    dv = (
        -6 * (v - 1 / 3) * e1
        + 6 * (v - 5 / 3) * e2
        + 10 * v * e3
        + 10 * v * e4
        + 0.8 * (v - 1 / 3) ** 3
    )
    return du, dv


def potential(x):
    """V at one point or at each row of an array of points."""
    x = np.asarray(x, dtype=float)
    return three_well(x[..., 0], x[..., 1]) + NUISANCE_STIFFNESS * np.sum(x[..., 2:] ** 2, axis=-1)


def potential_grad(x):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    g[..., 0], g[..., 1] = three_well_grad(x[..., 0], x[..., 1])
    g[..., 2:] = 2 * NUISANCE_STIFFNESS * x[..., 2:]
    return g


def em_step(x, dt, beta, rng, grad=potential_grad, noise=None):
    """One Euler-Maruyama step ``x - grad V(x) dt + sqrt(2 dt / beta) xi``.

    ``noise`` replaces the standard normal draw (pass zeros for the
    deterministic drift map).
    """
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    x = np.asarray(x, dtype=float)
    xi = rng.standard_normal(x.shape) if noise is None else np.asarray(noise, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        out = x - grad(x) * dt + np.sqrt(2 * dt / beta) * xi
    if not np.all(np.isfinite(out)):
        raise SimulationBlowupError("state became non-finite at step 1", step=1)
    return out


@numba.njit(cache=True)
def _grad_into(x, g):
    u = x[0]
    v = x[1]
    e1 = np.exp(-u * u - (v - 1 / 3) ** 2)
    e2 = np.exp(-u * u - (v - 5 / 3) ** 2)
    e3 = np.exp(-(u - 1) ** 2 - v * v)
    e4 = np.exp(-(u + 1) ** 2 - v * v)
    g[0] = -6 * u * e1 + 6 * u * e2 + 10 * (u - 1) * e3 + 10 * (u + 1) * e4 + 0.8 * u**3
    g[1] = (
        -6 * (v - 1 / 3) * e1
        + 6 * (v - 5 / 3) * e2
        + 10 * v * e3
        + 10 * v * e4
        + 0.8 * (v - 1 / 3) ** 3
    )
    for i in range(2, x.shape[0]):
        g[i] = 4.0 * x[i]


@numba.njit(cache=True)
def _run_chain(x, noise, dt, scale, stride, out):
    """Advance ``x`` in place over ``noise.shape[0]`` steps.

    Every ``stride`` steps the state is copied into the next row of ``out``.
    Returns the index of the first non-finite step, or -1.
    """
    d = x.shape[0]
    g = np.empty(d)
    row = 0
    for t in range(noise.shape[0]):
        _grad_into(x, g)
        ok = True
        for i in range(d):
            x[i] = x[i] - g[i] * dt + scale * noise[t, i]
            if not np.isfinite(x[i]):
                ok = False
        if not ok:
            return t
        if stride > 0 and (t + 1) % stride == 0:
            out[row, :] = x
            row += 1
    return -1


def simulate_chain(x0, n_steps, dt, beta, rng, stride=0, chunk=100_000):
    """Run one trajectory for ``n_steps`` steps.

    Returns the final state and, when ``stride > 0``, the states recorded every
    ``stride`` steps.  Noise is drawn from ``rng`` in chunks so memory stays
    bounded.
    """
    x = np.array(x0, dtype=float)
    d = x.shape[0]
    scale = np.sqrt(2 * dt / beta)
    if stride > 0:
        chunk = max(stride, (chunk // stride) * stride)
        record = np.empty((n_steps // stride, d))
    else:
        record = np.empty((0, d))
    done = 0
    row = 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        noise = rng.standard_normal((m, d))
        out = record[row:] if stride > 0 else record
        bad = _run_chain(x, noise, dt, scale, stride, out)
        if bad >= 0:
            raise SimulationBlowupError(
                f"state became non-finite at step {done + bad + 1}", step=done + bad + 1
            )
        if stride > 0:
            row += m // stride
        done += m
    return x, record


def propagate(x0, n_steps, dt, beta, rng, grad=potential_grad):
    """Advance many independent copies (rows of ``x0``) by ``n_steps`` steps."""
    x = np.array(x0, dtype=float)
    scale = np.sqrt(2 * dt / beta)
    for t in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            x = x - grad(x) * dt + scale * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            raise SimulationBlowupError(f"state became non-finite at step {t + 1}", step=t + 1)
    return x


def importance_weights(v, beta, beta_s):
    """Likelihood ratios ``exp((beta_s - beta) V)`` up to a constant."""
    return np.exp((beta_s - beta) * np.asarray(v, dtype=float))


def generate_dataset(plan, pot, regions, x0=None):
    """Two-stage dataset generation.

    Stage 1 runs a single chain at ``beta_s`` and stores the state every
    ``spacing`` after the burn-in.  Stage 2 launches every stored state for
    ``tau`` at the target ``beta`` to obtain the lagged end point.
    """
    stage1, stage2 = (np.random.default_rng(s) for s in np.random.SeedSequence(plan.seed).spawn(2))
    if x0 is None:
        x0 = np.zeros(pot.dim)
        x0[0] = -1.0
    x = np.array(x0, dtype=float)
    if plan.burn_in_steps:
        x, _ = simulate_chain(x, plan.burn_in_steps, plan.dt, pot.beta_s, stage1)
    stride = plan.spacing_steps
    _, xs = simulate_chain(x, plan.n_samples * stride, plan.dt, pot.beta_s, stage1, stride=stride)
    ys = propagate(xs, plan.lag_steps, plan.dt, pot.beta, stage2)
    w = importance_weights(potential(xs), pot.beta, pot.beta_s)
    meta = {
        "beta": pot.beta,
        "beta_s": pot.beta_s,
        "potential": pot.name,
        "dt": plan.dt,
        "spacing": plan.spacing,
        "burn_in": plan.burn_in,
        "seed": plan.seed,
        "version": __version__,
    }
    return TrajectoryDataset.from_regions(xs, ys, w, regions, tau=plan.tau, meta=meta)

"""Time-lagged trajectory pairs with importance weights."""
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidArgumentError
from .regions import CHAR_LABELS, IN_B, LABEL_CHARS, OMEGA, as_labels

HEADER_KEYS = ("d", "N", "tau", "beta", "beta_s")


@dataclass(frozen=True)
class TrajectoryDataset:
    """N pairs ``(x_n, y_n)`` separated by lag ``tau``, with weights ``w_n``.

    ``x_region`` and ``y_region`` hold the label (OMEGA, IN_A, IN_B) of every
    start and end point.  ``meta`` carries free-form provenance (seed,
    temperatures, ...) that is written to the file header.
    """

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    x_region: np.ndarray
    y_region: np.ndarray
    tau: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        w = np.ascontiguousarray(self.w, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise InvalidArgumentError(f"x must be a nonempty (N, d) array, got {x.shape}")
        if y.shape != x.shape:
            raise InvalidArgumentError(f"x and y shapes differ: {x.shape} vs {y.shape}")
        n = x.shape[0]
        if w.shape != (n,):
            raise InvalidArgumentError(f"expected {n} weights, got shape {w.shape}")
        if not np.all(w > 0) or not np.all(np.isfinite(w)):
            raise InvalidArgumentError("weights must be positive and finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x_region", as_labels(self.x_region, n))
        object.__setattr__(self, "y_region", as_labels(self.y_region, n))

    @classmethod
    def from_regions(cls, x, y, w, regions, **kwargs):
        """Build a dataset, labelling every point with ``regions.label``."""
        return cls(x, y, w, regions.label(x), regions.label(y), **kwargs)

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def count(self):
        return self.x.shape[0]

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        return TrajectoryDataset(
            self.x[idx], self.y[idx], self.w[idx], self.x_region[idx], self.y_region[idx],
            tau=self.tau, meta=dict(self.meta),
        )

    def split(self, fraction, seed):
        """Seeded shuffle, then ``(train, validation)`` with ``fraction`` held out."""
        perm = np.random.default_rng(seed).permutation(self.count)
        n_val = int(round(fraction * self.count))
        if n_val < 1 or n_val >= self.count:
            raise InvalidArgumentError(f"cannot hold out {fraction:.0%} of {self.count} pairs")
        return self.subset(np.sort(perm[n_val:])), self.subset(np.sort(perm[:n_val]))

    def sample(self, n, rng):
        """Uniform random subset of ``n`` pairs without replacement."""
        if n > self.count:
            raise InvalidArgumentError(f"cannot draw {n} pairs from {self.count}")
        if n == self.count:
            return self.subset(np.arange(n))
        return self.subset(np.sort(rng.choice(self.count, size=n, replace=False)))

    def interior_start(self):
        return self.x_region == OMEGA

    def b_vector(self):
        return assemble_b(self)


def assemble_b(data):
    """Right-hand side ``sqrt(w_n) * (1_B(y_n) - 1_B(x_n))``."""
    jump = (data.y_region == IN_B).astype(float) - (data.x_region == IN_B).astype(float)
    return np.sqrt(data.w) * jump


def _fmt(v):
    return repr(float(v))


def write_dataset(path, data):
    """Write the header line then one row per pair.

    Each row is ``x (d values), y (d values), w, x_region, y_region`` with
    regions spelled A/B/O and floats in shortest round-trip form.
    """
    meta = dict(data.meta)
    head = {
        "d": data.dim,
        "N": data.count,
        "tau": _fmt(data.tau),
        "beta": meta.pop("beta", "nan"),
        "beta_s": meta.pop("beta_s", "nan"),
    }
    head.update(meta)
    xs = data.x.tolist()
    ys = data.y.tolist()
    ws = data.w.tolist()
    xr = [LABEL_CHARS[int(v)] for v in data.x_region]
    yr = [LABEL_CHARS[int(v)] for v in data.y_region]
    with open(path, "w") as fh:
        fh.write(",".join(f"{k}={v}" for k, v in head.items()) + "\n")
        for i in range(data.count):
            fh.write(",".join(map(repr, xs[i] + ys[i] + [ws[i]])))
            fh.write(f",{xr[i]},{yr[i]}\n")


def _parse_header(line):
    out = {}
    for part in line.strip().split(","):
        if "=" not in part:
            raise FormatError(f"malformed header field {part!r}")
        k, v = part.split("=", 1)
        out[k] = v
    missing = [k for k in HEADER_KEYS if k not in out]
    if missing:
        raise FormatError(f"dataset header lacks {missing}")
    return out


def _coerce(v):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def read_dataset(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty dataset file")
    head = _parse_header(lines[0])
    d, n = int(head["d"]), int(head["N"])
    rows = [ln for ln in lines[1:] if ln]
    if len(rows) != n:
        raise FormatError(f"{path}: header says N={n} but found {len(rows)} rows")
    x = np.empty((n, d))
    y = np.empty((n, d))
    w = np.empty(n)
    xr = np.empty(n, dtype=np.int8)
    yr = np.empty(n, dtype=np.int8)
    for i, ln in enumerate(rows):
        parts = ln.split(",")
        if len(parts) != 2 * d + 3:
            raise FormatError(f"{path}: row {i + 1} has {len(parts)} fields, expected {2 * d + 3}")
        try:
            vals = [float(p) for p in parts[: 2 * d + 1]]
            xr[i] = CHAR_LABELS[parts[-2]]
            yr[i] = CHAR_LABELS[parts[-1]]
        except (ValueError, KeyError) as exc:
            raise FormatError(f"{path}: row {i + 1}: {exc}") from None
        x[i] = vals[:d]
        y[i] = vals[d : 2 * d]
        w[i] = vals[2 * d]
    meta = {k: _coerce(v) for k, v in head.items() if k not in ("d", "N", "tau")}
    return TrajectoryDataset(x, y, w, xr, yr, tau=float(head["tau"]), meta=meta)

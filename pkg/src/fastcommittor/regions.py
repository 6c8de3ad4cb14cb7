"""Reactant/product set membership.

Region labels are stored as small integers: ``OMEGA`` (outside both sets),
``IN_A`` and ``IN_B``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, InvalidRegionError

OMEGA = 0
IN_A = 1
IN_B = 2

LABEL_CHARS = {OMEGA: "O", IN_A: "A", IN_B: "B"}
CHAR_LABELS = {c: k for k, c in LABEL_CHARS.items()}


@dataclass(frozen=True)
class BallRegions:
    """Sets A and B as closed discs in the plane of two coordinates.

    A point belongs to A when ``(x[i] - a_center[0])**2 + (x[j] - a_center[1])**2
    <= a_radius**2`` with ``(i, j) = coords``; likewise for B.
    """

    a_center: tuple = (-1.0, 0.0)
    a_radius: float = 0.3
    b_center: tuple = (1.0, 0.0)
    b_radius: float = 0.3
    coords: tuple = (0, 1)

    name = "balls"

    def __post_init__(self):
        if self.a_radius <= 0 or self.b_radius <= 0:
            raise InvalidArgumentError("region radii must be positive")
        gap = np.hypot(self.a_center[0] - self.b_center[0], self.a_center[1] - self.b_center[1])
        if gap <= self.a_radius + self.b_radius:
            raise InvalidRegionError("sets A and B overlap")

    def _inside(self, points, center, radius):
        p = np.asarray(points, dtype=float)
        i, j = self.coords
        du = p[..., i] - center[0]
        dv = p[..., j] - center[1]
        return du * du + dv * dv <= radius * radius

    def in_a(self, points):
        return self._inside(points, self.a_center, self.a_radius)

    def in_b(self, points):
        return self._inside(points, self.b_center, self.b_radius)

    def label(self, points):
        """Label each point (last axis = coordinates) as OMEGA, IN_A or IN_B."""
        a = self.in_a(points)
        b = self.in_b(points)
        if np.any(a & b):
            raise InvalidRegionError("a point lies in both A and B")
        out = np.zeros(np.shape(a), dtype=np.int8)
        out[a] = IN_A
        out[b] = IN_B
        return out

    def params(self):
        return {
            "a_center": list(self.a_center),
            "a_radius": self.a_radius,
            "b_center": list(self.b_center),
            "b_radius": self.b_radius,
            "coords": list(self.coords),
        }


def triple_well_regions():
    """Discs of radius 0.3 around (-1, 0) and (1, 0) in coordinates 1 and 2."""
    return BallRegions()


def as_labels(labels, n=None):
    """Coerce labels given as ints or 'A'/'B'/'O' characters into an int8 array."""
    arr = np.asarray(labels)
    if arr.dtype.kind in "US":
        try:
            arr = np.vectorize(CHAR_LABELS.__getitem__, otypes=[np.int8])(arr)
        except KeyError as exc:
            raise InvalidArgumentError(f"unknown region label {exc}") from None
    arr = arr.astype(np.int8, copy=False)
    if np.any((arr < OMEGA) | (arr > IN_B)):
        raise InvalidArgumentError("region labels must be OMEGA, IN_A or IN_B")
    if n is not None and arr.shape != (n,):
        raise InvalidArgumentError(f"expected {n} region labels, got shape {arr.shape}")
    return arr

"""Constraint submanifolds Q of T^d: flat sub-tori and round spheres.

Particle states are stored in ambient coordinates.  Momenta are identified
with tangent vectors through the induced Euclidean metric, so covectors and
vectors share one representation.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import AmbiguousLift, ConstraintViolation

TWO_PI = 2.0 * math.pi
CONSTRAINT_TOL = 1e-10


def wrap_angle(x):
    """Map to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, float), TWO_PI)


@dataclass(frozen=True)
class ParticleState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        for name in ("q", "p"):
            arr = np.array(getattr(self, name), float, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


class Submanifold:
    ambient_d: int
    dim: int

    def check(self, q) -> np.ndarray:
        raise NotImplementedError

    def tangent_project(self, q, v) -> np.ndarray:
        self.check(q)
        return self.project(q, v)

    def project(self, q, v) -> np.ndarray:
        """Tangential projection without the constraint check (for integrator internals)."""
        raise NotImplementedError

    def tangent_basis(self, q) -> np.ndarray:
        """Orthonormal basis of T_qQ as rows."""
        raise NotImplementedError

    def geodesic(self, q, p, dt):
        raise NotImplementedError

    def normal_acceleration(self, q, p) -> np.ndarray:
        """Ambient acceleration needed to stay on Q when moving with velocity p."""
        return np.zeros(self.ambient_d)

    def sample_point(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def retract(self, q) -> np.ndarray:
        """Nearest point of Q (used to clean up accumulated rounding)."""
        raise NotImplementedError


@dataclass(frozen=True)
class FlatTorus(Submanifold):
    """Sub-torus spanned by ``axes``; the other coordinates are fixed by ``offset``."""

    ambient_d: int
    axes: tuple
    offset: tuple

    def __post_init__(self):
        axes = tuple(int(a) for a in self.axes)
        if not 1 <= len(axes) <= self.ambient_d:
            raise ValueError("sub-torus dimension must lie in [1, d]")
        if len(set(axes)) != len(axes) or min(axes) < 0 or max(axes) >= self.ambient_d:
            raise ValueError("sub-torus axes must be distinct ambient indices")
        offset = tuple(float(v) for v in self.offset)
        if len(offset) != self.ambient_d:
            raise ValueError("offset must have one entry per ambient axis")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "offset", offset)

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def _mask(self) -> np.ndarray:
        m = np.zeros(self.ambient_d, bool)
        m[list(self.axes)] = True
        return m

    def check(self, q) -> np.ndarray:
        q = np.asarray(q, float)
        fixed = ~self._mask
        off = np.asarray(self.offset)[fixed]
        if np.any(np.abs(wrap_angle(q[fixed] - off)) > CONSTRAINT_TOL):
            raise ConstraintViolation("point leaves the sub-torus")
        return q

    def project(self, q, v) -> np.ndarray:
        return np.where(self._mask, np.asarray(v, float), 0.0)

    def tangent_basis(self, q) -> np.ndarray:
        return np.eye(self.ambient_d)[list(self.axes)]

    def geodesic(self, q, p, dt):
        q = np.asarray(q, float)
        return np.mod(q + np.where(self._mask, p, 0.0) * dt, TWO_PI), np.asarray(p, float).copy()

    def sample_point(self, rng):
        q = np.asarray(self.offset, float).copy()
        q[list(self.axes)] = rng.uniform(0, TWO_PI, self.dim)
        return q

    def retract(self, q) -> np.ndarray:
        q = np.asarray(q, float).copy()
        q[~self._mask] = np.asarray(self.offset)[~self._mask]
        return q


@dataclass(frozen=True)
class Sphere(Submanifold):
    """Round sphere S^{d-1} of radius r about c inside one fundamental domain."""

    ambient_d: int
    radius: float
    center: tuple

    def __post_init__(self):
        if not 0 < self.radius < math.pi:
            raise ValueError("sphere radius must lie in (0, pi)")
        c = tuple(float(v) for v in self.center)
        if len(c) != self.ambient_d:
            raise ValueError("center must have one entry per ambient axis")
        if any(not 0 <= v < TWO_PI for v in c):
            raise ValueError("center components must lie in [0, 2 pi)")
        if self.ambient_d < 2:
            raise ValueError("a sphere needs ambient dimension at least 2")
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.ambient_d - 1

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center)

    def check(self, q) -> np.ndarray:
        q = np.asarray(q, float)
        if abs(np.linalg.norm(q - self.c) - self.radius) > CONSTRAINT_TOL:
            raise ConstraintViolation("point leaves the sphere")
        return q

    def unit_normal(self, q) -> np.ndarray:
        x = np.asarray(q, float) - self.c
        return x / np.linalg.norm(x)

    def project(self, q, v) -> np.ndarray:
        e = self.unit_normal(q)
        v = np.asarray(v, float)
        return v - (e @ v) * e

    def tangent_basis(self, q) -> np.ndarray:
        e = self.unit_normal(q)
        if self.ambient_d == 2:
            return np.array([[-e[1], e[0]]])
        # complete e to an orthonormal frame; the remaining columns span T_qQ
        u, _, _ = np.linalg.svd(e[:, None], full_matrices=True)
        return u[:, 1:].T

    def geodesic(self, q, p, dt):
        e1 = self.unit_normal(q)
        p = np.asarray(p, float)
        p = p - (e1 @ p) * e1
        speed = np.linalg.norm(p)
        if speed == 0.0:
            return self.c + self.radius * e1, p
        e2 = p / speed
        ang = speed * dt / self.radius
        ca, sa = math.cos(ang), math.sin(ang)
        q1 = self.c + self.radius * (ca * e1 + sa * e2)
        p1 = speed * (-sa * e1 + ca * e2)
        return q1, p1

    def normal_acceleration(self, q, p) -> np.ndarray:
        e = self.unit_normal(q)
        return -(np.dot(p, p) / self.radius) * e

    def sample_point(self, rng):
        v = rng.standard_normal(self.ambient_d)
        return self.c + self.radius * v / np.linalg.norm(v)

    def retract(self, q) -> np.ndarray:
        return self.c + self.radius * self.unit_normal(q)

    def angle(self, q) -> float:
        """Polar angle about the center; only meaningful for circles."""
        x = np.asarray(q, float) - self.c
        return math.atan2(x[1], x[0])


def tangent_project(m: Submanifold, q, v) -> np.ndarray:
    return m.tangent_project(q, v)


def geodesic_step(m: Submanifold, s: ParticleState, dt: float) -> ParticleState:
    m.check(s.q)
    q, p = m.geodesic(s.q, s.p, dt)
    return ParticleState(q, p)


def force_pullback(m: Submanifold, q, g) -> np.ndarray:
    """Tangential part of an ambient gradient; with the induced flat metric this is its dual."""
    return m.tangent_project(q, g)


def loop_contractible(m: Submanifold, qs) -> bool:
    """Homotopy class test for a closed sampled loop (last sample joins the first)."""
    qs = np.asarray(qs, float)
    if qs.ndim != 2 or qs.shape[1] != m.ambient_d:
        raise ValueError("loop samples must be an (Nt, d) array")
    for q in qs:
        m.check(q)
    if isinstance(m, Sphere) and m.dim >= 2:
        return True
    guard = math.pi / 2
    closed = np.vstack([qs, qs[:1]])
    if isinstance(m, Sphere):
        th = np.array([m.angle(q) for q in closed])
        steps = wrap_angle(np.diff(th))
        # chord guard expressed in arc length
        if np.any(np.abs(steps) * m.radius > guard):
            raise AmbiguousLift("consecutive loop samples are too far apart")
        return round(float(np.sum(steps)) / TWO_PI) == 0
    steps = wrap_angle(np.diff(closed[:, list(m.axes)], axis=0))
    if np.any(np.abs(steps) > guard):
        raise AmbiguousLift("consecutive loop samples are too far apart")
    winding = np.round(np.sum(steps, axis=0) / TWO_PI)
    return bool(np.all(winding == 0))

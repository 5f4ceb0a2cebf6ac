"""Coordinate spaces, embedded constraint manifolds and retractions.

A :class:`Space` is ``R^n`` cut down by constraint equations (an embedded
submanifold) and/or strict inequalities (an open subset).  Points are plain
1-D float arrays of length ``space.dim``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels as K
from .expr import DimensionError, Expr, compile_exprs, differentiate, parse

RETRACTIONS = {
    "newton": K.RETRACT_NEWTON,
    "normalize": K.RETRACT_NORMALIZE,
    "orthonormalize": K.RETRACT_ORTHONORMALIZE,
}


class RetractionError(RuntimeError):
    pass


class RankDeficientError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Space:
    name: str
    coords: tuple[str, ...]
    constraints: tuple[Expr, ...] = ()
    domain: tuple[Expr, ...] = ()
    retraction: str = "newton"
    periods: tuple[float, ...] | None = None
    sampling_box: tuple[tuple[float, float], ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "domain", tuple(self.domain))
        if self.retraction not in RETRACTIONS:
            raise ValueError(f"unknown retraction {self.retraction!r}")
        if self.periods is not None:
            periods = tuple(float(p) for p in self.periods)
            if len(periods) != self.dim:
                raise ValueError("periods must give one entry per coordinate (0 for non-periodic)")
            object.__setattr__(self, "periods", periods)
        if self.retraction == "orthonormalize" and round(self.dim**0.5) ** 2 != self.dim:
            raise ValueError("orthonormalize needs a square-matrix chart")

    @classmethod
    def from_strings(
        cls,
        name: str,
        coords: Sequence[str] | int,
        constraints: Sequence[str] = (),
        domain: Sequence[str] = (),
        retraction: str = "newton",
        periods: Sequence[float] | None = None,
        sampling_box=None,
    ) -> "Space":
        if isinstance(coords, int):
            coords = [f"x{i + 1}" for i in range(coords)]
        coords = tuple(coords)
        return cls(
            name,
            coords,
            tuple(parse(c, coords) for c in constraints),
            tuple(parse(d, coords) for d in domain),
            retraction,
            periods,
            None if sampling_box is None else tuple(tuple(map(float, b)) for b in sampling_box),
        )

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def is_constrained(self) -> bool:
        return bool(self.constraints)

    @cached_property
    def constraint_jacobian_exprs(self) -> tuple[Expr, ...]:
        return tuple(differentiate(c, j) for c in self.constraints for j in range(self.dim))

    @cached_property
    def period_array(self) -> np.ndarray:
        if self.periods is None:
            return np.zeros(self.dim)
        return np.asarray(self.periods, dtype=float)

    @cached_property
    def geo(self):
        """Kernel-side description: retraction, periods, constraints, domain."""
        mode = RETRACTIONS[self.retraction] if self.constraints else K.RETRACT_NONE
        return (
            mode,
            self.period_array,
            compile_exprs(self.constraints).kernel_args,
            compile_exprs(self.constraint_jacobian_exprs).kernel_args,
            len(self.constraints),
            compile_exprs(self.domain).kernel_args,
            len(self.domain),
        )

    def check_point(self, p) -> np.ndarray:
        x = np.asarray(p, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise DimensionError(f"{self.name}: point has {x.shape[0]} coordinates, expected {self.dim}")
        return x

    def constraint_values(self, p) -> np.ndarray:
        x = self.check_point(p)
        if not self.constraints:
            return np.zeros(0)
        return K.eval_points(self.geo[2], x[None, :])[0]

    def constraint_jacobian(self, p) -> np.ndarray:
        x = self.check_point(p)
        if not self.constraints:
            return np.zeros((0, self.dim))
        vals = K.eval_points(self.geo[3], x[None, :])[0]
        return vals.reshape(len(self.constraints), self.dim)

    def domain_values(self, p) -> np.ndarray:
        x = self.check_point(p)
        if not self.domain:
            return np.zeros(0)
        return K.eval_points(self.geo[5], x[None, :])[0]

    def wrap(self, p) -> np.ndarray:
        x = self.check_point(p).copy()
        K.wrap_periodic(x, self.period_array)
        return x

    def displacement(self, p, q) -> np.ndarray:
        """``q - p`` with periodic coordinates taken to the nearest image."""
        d = self.check_point(q) - self.check_point(p)
        per = self.period_array
        mask = per > 0
        d[mask] -= per[mask] * np.round(d[mask] / per[mask])
        return d

    def distance(self, p, q) -> float:
        return float(np.linalg.norm(self.displacement(p, q)))

    def tangent_dimension(self, p) -> int:
        if not self.constraints:
            return self.dim
        s = np.linalg.svd(self.constraint_jacobian(p), compute_uv=False)
        return self.dim - int(np.sum(s > 1e-8))


def euclidean(n: int, name: str | None = None, coords: Sequence[str] | None = None) -> Space:
    coords = tuple(coords) if coords is not None else tuple(f"x{i + 1}" for i in range(n))
    return Space(name or f"R{n}", coords)


def contains(space: Space, p, tol: float = 1e-9) -> bool:
    """Constraints within ``tol`` and every domain inequality strictly positive."""
    x = space.check_point(p)
    if not np.all(np.isfinite(x)):
        return False
    if space.constraints:
        c = space.constraint_values(x)
        if not np.all(np.abs(c) <= tol):
            return False
    if space.domain:
        d = space.domain_values(x)
        if not np.all(d > 0.0):
            return False
    return True


def retract(space: Space, p) -> np.ndarray:
    """Project a nearby point back onto the constraint set.

    Raises :class:`RetractionError` when the Gauss-Newton iteration (or the
    polar correction) does not converge.
    """
    x = space.wrap(p)
    if not space.constraints:
        return x
    stack = np.empty(max(space.geo[2][0].shape[0], space.geo[3][0].shape[0]) + 1)
    if not K.retract_inplace(x, space.dim, space.geo, stack):
        raise RetractionError(f"{space.name}: retraction did not converge from {np.asarray(p).tolist()}")
    return x


def tangent_projector(space: Space, p) -> np.ndarray:
    """Orthogonal projector onto the kernel of the constraint Jacobian at ``p``."""
    n = space.dim
    if not space.constraints:
        return np.eye(n)
    J = space.constraint_jacobian(p)
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    if s.size and s.min() <= 1e-8:
        raise RankDeficientError(f"{space.name}: constraint Jacobian is rank deficient (sigma_min={s.min():.3g})")
    return np.eye(n) - Vt.T @ Vt


def tangent_project(space: Space, p, v) -> np.ndarray:
    vec = np.asarray(v, dtype=float).reshape(-1)
    if vec.shape[0] != space.dim:
        raise DimensionError(f"{space.name}: vector has {vec.shape[0]} entries, expected {space.dim}")
    if not space.constraints:
        return vec.copy()
    return tangent_projector(space, p) @ vec


class SampleGenerationError(RuntimeError):
    pass


def default_box(space: Space) -> np.ndarray:
    if space.sampling_box is not None:
        return np.asarray(space.sampling_box, dtype=float)
    box = np.tile([-1.0, 1.0], (space.dim, 1))
    per = space.period_array
    box[per > 0, 0] = 0.0
    box[per > 0, 1] = per[per > 0]
    return box


def _onto_manifold(space: Space, x: np.ndarray) -> np.ndarray | None:
    if not space.constraints:
        return x
    if space.retraction == "normalize":
        nrm = np.linalg.norm(x)
        return None if nrm == 0.0 else x / nrm
    if space.retraction == "orthonormalize":
        d = int(round(space.dim**0.5))
        U, _, Vt = np.linalg.svd(x.reshape(d, d))
        return (U @ Vt).reshape(-1)
    try:
        return retract(space, x)
    except RetractionError:
        return None


def sample_points(space: Space, count: int, seed: int = 0, quasi: bool = False, box=None) -> np.ndarray:
    """Random points of ``space``.

    Draws from the sampling box (manifest-provided, else ``[-1, 1]^n`` with
    periodic coordinates over one period), pushes draws onto the constraint
    set and rejects those outside the domain.  Gives up after
    ``100 * count`` attempts.
    """
    from scipy.stats import qmc

    box = np.asarray(box, dtype=float) if box is not None else default_box(space)
    lo, hi = box[:, 0], box[:, 1]
    rng = np.random.default_rng(seed)
    halton = qmc.Halton(d=space.dim, scramble=True, seed=seed) if quasi else None
    out: list[np.ndarray] = []
    attempts = 0
    limit = 100 * max(count, 1)
    while len(out) < count and attempts < limit:
        batch = min(limit - attempts, max(2 * (count - len(out)), 8))
        u = halton.random(batch) if halton is not None else rng.random((batch, space.dim))
        attempts += batch
        for row in lo + u * (hi - lo):
            x = _onto_manifold(space, row)
            if x is not None and contains(space, x, 1e-9):
                out.append(x)
                if len(out) == count:
                    break
    if len(out) < count:
        raise SampleGenerationError(f"{space.name}: only {len(out)} of {count} samples after {attempts} attempts")
    return np.array(out)

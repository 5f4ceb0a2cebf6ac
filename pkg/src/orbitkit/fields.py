"""Vector fields, families, Lie brackets and pushing fields around by flows.

The largest family with the same orbits as a given one is not computable, so
two surrogates stand in for it here:

* :func:`bracket_closure` -- iterated symbolic brackets up to a depth, with
  zero and proportional terms dropped;
* :func:`adjoint_transport` / :func:`push_forward` -- pointwise values of a
  field transported by the (numerical) flow of another.

Ranks computed from either are lower bounds for smooth, non-analytic fields.
"""
from __future__ import annotations

import logging
import warnings
import zlib
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Sequence, Union

import numpy as np

from . import _kernels as K
from .expr import (
    ZERO,
    DomainError,
    Expr,
    Vanishing,
    add,
    compile_exprs,
    differentiate,
    evaluate,
    is_const,
    mul,
    parse,
    simplify,
    sub,
    vanishing,
)
from .geometry import Space, sample_points, tangent_project

if TYPE_CHECKING:
    from .flow import FlowOptions, FlowWord

log = logging.getLogger(__name__)

N_DEDUP_POINTS = 32
CLOSURE_SIZE_WARNING = 500


class SpaceMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VectorField:
    name: str
    space: Space
    components: tuple[Expr, ...]
    declared_complete: bool = False

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.space.dim:
            raise ValueError(f"field {self.name!r} has {len(comps)} components on a {self.space.dim}-dimensional space")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_strings(cls, name: str, space: Space, components: Sequence[str], declared_complete: bool = False):
        return cls(name, space, tuple(parse(c, space.coords) for c in components), declared_complete)

    @cached_property
    def is_zero(self) -> bool:
        return all(is_const(c, 0.0) for c in self.components)

    @cached_property
    def jacobian_exprs(self) -> tuple[tuple[Expr, ...], ...]:
        """``J[i][j] = d X^i / d x_j``."""
        n = self.space.dim
        return tuple(tuple(differentiate(c, j) for j in range(n)) for c in self.components)

    @cached_property
    def program(self):
        return compile_exprs(self.components)

    @cached_property
    def jacobian_program(self):
        return compile_exprs([e for row in self.jacobian_exprs for e in row])

    @property
    def numeric(self):
        """Kernel view: (fields program, Jacobian program, zero mask, count)."""
        return self.program.kernel_args, self.jacobian_program.kernel_args, np.array([self.is_zero]), 1

    def __call__(self, p) -> np.ndarray:
        x = self.space.check_point(p)
        v = K.eval_points(self.program.kernel_args, x[None, :])[0]
        if not np.all(np.isfinite(v)):
            for c in self.components:
                evaluate(c, x)  # raises the precise DomainError
            raise DomainError(f"{self.name}: non-finite value at {x.tolist()}")
        return v

    def jacobian(self, p) -> np.ndarray:
        x = self.space.check_point(p)
        n = self.space.dim
        v = K.eval_points(self.jacobian_program.kernel_args, x[None, :])[0]
        if not np.all(np.isfinite(v)):
            raise DomainError(f"{self.name}: non-finite Jacobian at {x.tolist()}")
        return v.reshape(n, n)

    def scaled(self, factor: Expr, name: str | None = None) -> "VectorField":
        return VectorField(
            name or f"({factor})*{self.name}",
            self.space,
            tuple(simplify(mul(factor, c)) for c in self.components),
            False,
        )

    def text_components(self) -> list[str]:
        return [str(c) for c in self.components]


@dataclass(frozen=True, eq=False)
class Family:
    name: str
    fields: tuple[VectorField, ...]

    def __post_init__(self):
        fields = tuple(self.fields)
        if not fields:
            raise ValueError(f"family {self.name!r} is empty")
        space = fields[0].space
        for f in fields:
            if f.space is not space:
                raise SpaceMismatchError(f"family {self.name!r} mixes spaces {space.name!r} and {f.space.name!r}")
        names = [f.name for f in fields]
        if len(set(names)) != len(names):
            raise ValueError(f"family {self.name!r} has duplicate field names")
        object.__setattr__(self, "fields", fields)

    @property
    def space(self) -> Space:
        return self.fields[0].space

    def __len__(self) -> int:
        return len(self.fields)

    def __getitem__(self, i: int) -> VectorField:
        return self.fields[i]

    def __iter__(self):
        return iter(self.fields)

    def index(self, name: str) -> int:
        for i, f in enumerate(self.fields):
            if f.name == name:
                return i
        raise KeyError(name)

    @cached_property
    def numeric(self):
        progs = compile_exprs([c for f in self.fields for c in f.components])
        jacs = compile_exprs([e for f in self.fields for row in f.jacobian_exprs for e in row])
        zero = np.array([f.is_zero for f in self.fields])
        return progs.kernel_args, jacs.kernel_args, zero, len(self.fields)

    def closure(self, depth: int) -> list["BracketTerm"]:
        """Memoized :func:`bracket_closure` of this family."""
        cache = self.__dict__.setdefault("_closures", {})
        if depth not in cache:
            cache[depth] = bracket_closure(self, depth)
        return cache[depth]

    @cached_property
    def dedup_points(self) -> np.ndarray:
        """Deterministic quasi-random sample points seeded from the family name."""
        seed = zlib.crc32(self.name.encode())
        return sample_points(self.space, N_DEDUP_POINTS, seed=seed, quasi=True)


FieldLike = Union[VectorField, Family]


# ---------------------------------------------------------------------------
# brackets


def _same_space(X: VectorField, Y: VectorField):
    if X.space is not Y.space:
        raise SpaceMismatchError(f"{X.name!r} lives on {X.space.name!r}, {Y.name!r} on {Y.space.name!r}")


def lie_bracket(X: VectorField, Y: VectorField, name: str | None = None) -> VectorField:
    """``[X, Y]^i = sum_j X^j d_j Y^i - Y^j d_j X^i``, simplified."""
    _same_space(X, Y)
    n = X.space.dim
    dX, dY = X.jacobian_exprs, Y.jacobian_exprs
    comps = []
    for i in range(n):
        a: Expr = ZERO
        b: Expr = ZERO
        for j in range(n):
            a = add(a, mul(X.components[j], dY[i][j]))
            b = add(b, mul(Y.components[j], dX[i][j]))
        comps.append(simplify(sub(a, b)))
    return VectorField(name or f"[{X.name},{Y.name}]", X.space, tuple(comps))


Tree = Union[int, tuple]


def tree_depth(tree: Tree) -> int:
    if isinstance(tree, int):
        return 1
    return max(tree_depth(tree[0]), tree_depth(tree[1])) + 1


def tree_text(tree: Tree) -> str:
    if isinstance(tree, int):
        return str(tree)
    return f"[{tree_text(tree[0])},{tree_text(tree[1])}]"


@dataclass(frozen=True, eq=False)
class BracketTerm:
    tree: Tree
    field: VectorField

    @property
    def depth(self) -> int:
        return tree_depth(self.tree)

    @property
    def text(self) -> str:
        return tree_text(self.tree)

    @property
    def is_generator(self) -> bool:
        return isinstance(self.tree, int)


def realize(F: Family, tree: Tree) -> VectorField:
    """Fold :func:`lie_bracket` over a bracket tree."""
    if isinstance(tree, int):
        return F[tree]
    return lie_bracket(realize(F, tree[0]), realize(F, tree[1]))


def _proportional(u: np.ndarray, v: np.ndarray, rel: float = 1e-8) -> bool:
    mask = np.isfinite(u) & np.isfinite(v)
    if not mask.any():
        return False
    u, v = u[mask], v[mask]
    uu = float(u @ u)
    if uu == 0.0:
        return False
    r = v - (float(u @ v) / uu) * u
    return float(np.linalg.norm(r)) <= rel * float(np.linalg.norm(v))


def bracket_closure(F: Family, depth: int) -> list[BracketTerm]:
    """Bracket trees of depth <= ``depth``, deduplicated.

    Terms that vanish (symbolically, or numerically at the family's 32
    dedup points) are dropped, as are terms numerically proportional to an
    earlier kept term.  Generators come first in family order, then
    brackets by depth and tree text.  New brackets are formed only from
    kept terms; dropped terms contribute nothing new to the span.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    pts = F.dedup_points
    kept: list[BracketTerm] = []
    kept_values: list[np.ndarray] = []

    def consider(tree: Tree, field: VectorField):
        if vanishing(field.components, pts) is not Vanishing.NONZERO:
            return
        vals = K.eval_points(field.program.kernel_args, pts).reshape(-1)
        if any(_proportional(u, vals) for u in kept_values):
            return
        kept.append(BracketTerm(tree, field))
        kept_values.append(vals)

    for i, X in enumerate(F):
        consider(i, X)
    for d in range(2, depth + 1):
        cands = []
        for a in range(len(kept)):
            for b in range(a + 1, len(kept)):
                ta, tb = kept[a], kept[b]
                if max(ta.depth, tb.depth) != d - 1:
                    continue
                cands.append((ta.tree, tb.tree, ta.field, tb.field))
        cands.sort(key=lambda c: tree_text((c[0], c[1])))
        for ta, tb, fa, fb in cands:
            tree = (ta, tb)
            consider(tree, lie_bracket(fa, fb, name=f"[{fa.name},{fb.name}]"))
        if len(kept) > CLOSURE_SIZE_WARNING:
            warnings.warn(f"bracket closure of {F.name!r} has {len(kept)} terms", RuntimeWarning, stacklevel=2)
    return kept


# ---------------------------------------------------------------------------
# relatedness


@dataclass(frozen=True)
class RelatedReport:
    max_residual: float
    passed: bool
    worst_sample: tuple[float, ...] | None = None

    def as_dict(self) -> dict:
        return {"max_residual": self.max_residual, "pass": self.passed}


class RelatedCheckError(RuntimeError):
    def __init__(self, message: str, sample):
        super().__init__(f"{message} at sample {list(sample)}")
        self.sample = tuple(float(v) for v in sample)


def related_check(phi, X0: VectorField, X1: VectorField, samples, tol: float) -> RelatedReport:
    """Max over samples of ``|Dphi(p) X0(p) - X1(phi(p))|``."""
    if X0.space is not phi.domain or X1.space is not phi.codomain:
        raise SpaceMismatchError(f"fields {X0.name!r}/{X1.name!r} do not match map {phi.name!r}")
    worst = 0.0
    worst_p = None
    for p in np.atleast_2d(np.asarray(samples, dtype=float)):
        try:
            lhs = phi.jacobian(p) @ X0(p)
            rhs = X1(phi(p))
        except DomainError as exc:
            raise RelatedCheckError(str(exc), p) from exc
        r = float(np.linalg.norm(lhs - rhs))
        if r > worst or worst_p is None:
            worst, worst_p = r, tuple(float(v) for v in p)
    return RelatedReport(worst, worst <= tol, worst_p)


# ---------------------------------------------------------------------------
# pushing around


def adjoint_transport(X: VectorField, t: float, Y: VectorField, p, opts: "FlowOptions | None" = None) -> np.ndarray:
    """Value at ``p`` of the field ``Y`` pushed forward by the time-``t`` flow of ``X``.

    With ``q = e^{-tX}(p)`` this is ``D e^{tX}(q) Y(q)``, the Jacobian coming
    from the variational equation.
    """
    from .flow import flow, flow_with_jacobian

    _same_space(X, Y)
    x = X.space.check_point(p)
    if t == 0.0:
        return Y(x)
    q = flow(X, -t, x, opts)
    _, M = flow_with_jacobian(X, t, q, opts)
    v = M @ Y(q)
    if X.space.is_constrained:
        v = tangent_project(X.space, x, v)
    return v


def push_forward(F: Family, word: "FlowWord", fields: Sequence[VectorField], p, opts: "FlowOptions | None" = None) -> np.ndarray:
    """Values at ``p`` of ``fields`` pushed forward by the composite flow of ``word``.

    Returns an array of shape ``(len(fields), n)``.  The word acts rightmost
    letter first, so for ``Phi = e^{t1 X1} ... e^{tk Xk}`` the result is
    ``DPhi(q) Y(q)`` with ``q = Phi^{-1}(p)``.
    """
    from .flow import flow_with_jacobian, flow_word

    x = F.space.check_point(p)
    q = flow_word(F, word.inverse(), x, opts)
    V = np.array([Y(q) for Y in fields]).T
    cur = q
    for f_idx, t in reversed(word.letters):
        if t == 0.0 or F[f_idx].is_zero:
            continue
        cur, M = flow_with_jacobian(F[f_idx], t, cur, opts)
        V = M @ V
    if F.space.is_constrained:
        V = tangent_project_matrix(F.space, x, V)
    return V.T


def tangent_project_matrix(space: Space, p, V: np.ndarray) -> np.ndarray:
    from .geometry import tangent_projector

    return tangent_projector(space, p) @ V

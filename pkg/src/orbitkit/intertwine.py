"""Maps intertwining two families, and their local product structure.

For ``phi: M0 -> M1`` with ``phi_* F0 = F1`` and all fields complete, ``phi``
restricted to an orbit is a fiber bundle over an orbit below.  Locally, with a
distinguished chart ``t -> e^{t1 X1} ... e^{tk Xk} m1`` downstairs and lifts
``Y_j`` of the chart fields, a point ``u0`` upstairs splits as

    t  = chart coordinates of phi(u0),
    z  = e^{-tk Yk} ... e^{-t1 Y1} u0,

with ``z`` on the fiber over ``m1``.  This module builds that splitting and
checks it numerically: relatedness, constant rank along orbits, lifting of
words, round trips and overlap of two trivializations.
"""
from __future__ import annotations

import itertools
import logging
from pathlib import Path
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels as K
from .expr import DimensionError, DomainError, Expr, compile_exprs, differentiate, evaluate, parse, variables
from .fields import Family, RelatedReport, related_check
from .flow import DEFAULT_OPTIONS, FlowOptions, FlowWord, Incomplete, flow_word, random_words
from .geometry import Space, sample_points
from .orbit import (
    RANK_ABS_FLOOR,
    BoxError,
    ChartError,
    DistinguishedChart,
    chart_jacobian,
    chart_point,
    dedup,
    distinguished_chart,
    local_pca_dimension,
    numerical_rank,
    orbit_dimension,
    sample_orbit,
    write_cloud_csv,
)

log = logging.getLogger(__name__)

BASE_POINT_TOL = 1e-8
LANDING_TOL = 1e-7
LIFT_DEFECT_TOL = 1e-6


class MappedSystemError(ValueError):
    """Inconsistent mapped system (spaces or pairing)."""


class UnpairedIndexError(LookupError):
    pass


class FiberCoordinateError(RuntimeError):
    """Newton inversion of the chart did not converge inside the box."""


class TrivializationError(RuntimeError):
    """Diagnosed failure to build a local trivialization.

    ``kind`` is one of ``base-point``, ``dimension``, ``no-lift``,
    ``incomplete`` or ``lift-defect``.
    """

    def __init__(self, kind: str, message: str, detail: dict | None = None):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.detail = detail or {}

    def as_dict(self) -> dict:
        return {"error": "TrivializationError", "kind": self.kind, "message": str(self), **self.detail}


# ---------------------------------------------------------------------------
# maps and systems


@dataclass(frozen=True, eq=False)
class SmoothMap:
    name: str
    domain: Space
    codomain: Space
    components: tuple[Expr, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.codomain.dim:
            raise DimensionError(
                f"map {self.name!r} has {len(comps)} components but codomain {self.codomain.name!r} has dimension {self.codomain.dim}"
            )
        for c in comps:
            bad = [v for v in variables(c) if v >= self.domain.dim]
            if bad:
                raise DimensionError(f"map {self.name!r} uses coordinate {bad[0]} outside its domain")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_strings(cls, name: str, domain: Space, codomain: Space, components: Sequence[str]) -> "SmoothMap":
        return cls(name, domain, codomain, tuple(parse(c, domain.coords) for c in components))

    @cached_property
    def jacobian_exprs(self) -> tuple[tuple[Expr, ...], ...]:
        """``J[i][j] = d phi^i / d x_j``, shape ``m x n``."""
        return tuple(tuple(differentiate(c, j) for j in range(self.domain.dim)) for c in self.components)

    @cached_property
    def _programs(self):
        return (
            compile_exprs(self.components).kernel_args,
            compile_exprs([e for row in self.jacobian_exprs for e in row]).kernel_args,
        )

    def __call__(self, p) -> np.ndarray:
        x = self.domain.check_point(p)
        v = K.eval_points(self._programs[0], x[None, :])[0]
        if not np.all(np.isfinite(v)):
            for c in self.components:
                evaluate(c, x)
            raise DomainError(f"{self.name}: non-finite value at {x.tolist()}")
        return v

    def jacobian(self, p) -> np.ndarray:
        x = self.domain.check_point(p)
        v = K.eval_points(self._programs[1], x[None, :])[0]
        if not np.all(np.isfinite(v)):
            raise DomainError(f"{self.name}: non-finite Jacobian at {x.tolist()}")
        return v.reshape(self.codomain.dim, self.domain.dim)


@dataclass(frozen=True, eq=False)
class MappedSystem:
    """``phi`` together with a pairing ``F0[i] -> F1[j]`` asserting ``phi_* F0 = F1``.

    The pairing must be total on F0 (every upstairs field has an image) and
    onto F1 (every downstairs field has a lift).  When several upstairs
    fields map to one downstairs field the first listed pair is the lift.
    """

    name: str
    phi: SmoothMap
    F0: Family
    F1: Family
    pairing: tuple[tuple[int, int], ...]

    def __post_init__(self):
        pairing = tuple((int(a), int(b)) for a, b in self.pairing)
        object.__setattr__(self, "pairing", pairing)
        if self.F0.space is not self.phi.domain:
            raise MappedSystemError(f"{self.name}: F0 lives on {self.F0.space.name!r}, phi starts on {self.phi.domain.name!r}")
        if self.F1.space is not self.phi.codomain:
            raise MappedSystemError(f"{self.name}: F1 lives on {self.F1.space.name!r}, phi ends on {self.phi.codomain.name!r}")
        for k, (a, b) in enumerate(pairing):
            if not 0 <= a < len(self.F0) or not 0 <= b < len(self.F1):
                raise MappedSystemError(f"{self.name}: pairing[{k}] = {(a, b)} out of range")
        missing0 = sorted(set(range(len(self.F0))) - {a for a, _ in pairing})
        missing1 = sorted(set(range(len(self.F1))) - {b for _, b in pairing})
        if missing0:
            raise MappedSystemError(f"{self.name}: pairing is not total on F0 (missing {missing0})")
        if missing1:
            raise MappedSystemError(f"{self.name}: pairing is not onto F1 (missing {missing1})")

    def lift_index(self, j: int) -> int:
        for a, b in self.pairing:
            if b == j:
                return a
        raise UnpairedIndexError(f"{self.name}: F1 index {j} has no lift")


# ---------------------------------------------------------------------------
# relatedness and rank


@dataclass
class IntertwineReport:
    pairs: list[dict]
    max_residual: float
    passed: bool
    n_samples: int
    tol: float

    def as_dict(self) -> dict:
        return {
            "pairs": self.pairs,
            "max_residual": self.max_residual,
            "pass": self.passed,
            "n_samples": self.n_samples,
            "tol": self.tol,
        }


def check_intertwine(sys: MappedSystem, n_samples: int = 64, tol: float = 1e-8, seed: int = 0, samples=None) -> IntertwineReport:
    """Run :func:`related_check` for every pair over common domain samples."""
    pts = sample_points(sys.phi.domain, n_samples, seed=seed) if samples is None else np.atleast_2d(samples)
    pairs = []
    worst = 0.0
    for a, b in sys.pairing:
        rep: RelatedReport = related_check(sys.phi, sys.F0[a], sys.F1[b], pts, tol)
        pairs.append({"pair": [a, b], "f0": sys.F0[a].name, "f1": sys.F1[b].name, **rep.as_dict()})
        worst = max(worst, rep.max_residual)
    return IntertwineReport(pairs, worst, worst <= tol, len(pts), tol)


def _orbit_tangent_basis(F: Family, p: np.ndarray, depth: int, push_words: int, seed: int, opts: FlowOptions) -> np.ndarray:
    od = orbit_dimension(F, p, bracket_depth=depth, push_words=push_words, seed=seed, opts=opts)
    if od.k == 0:
        return np.zeros((F.space.dim, 0))
    U, _, _ = np.linalg.svd(od.columns, full_matrices=False)
    return U[:, : od.k]


def restricted_rank(sys: MappedSystem, p, rel_tol: float = 1e-7, bracket_depth: int = 3, push_words: int = 8,
                    seed: int = 0, opts: FlowOptions | None = None) -> int:
    """Rank of ``Dphi(p)`` on the tangent space of the F0-orbit through ``p``.

    Singular values of ``Dphi(p) B`` (``B`` an orthonormal orbit basis) are
    compared with ``rel_tol * |Dphi(p)|_2``, floored at 1e-12.
    """
    x = sys.phi.domain.check_point(p)
    D = sys.phi.jacobian(x)
    B = _orbit_tangent_basis(sys.F0, x, bracket_depth, push_words, seed, opts or DEFAULT_OPTIONS)
    if B.shape[1] == 0:
        return 0
    scale = float(np.linalg.norm(D, 2))
    if scale <= RANK_ABS_FLOOR:
        return 0
    return numerical_rank(D @ B, rel_tol, scale=scale)


@dataclass
class RankReport:
    ranks: list[int]
    constant: bool
    skipped: int

    def as_dict(self) -> dict:
        return {"ranks": self.ranks, "constant": self.constant, "skipped_words": self.skipped}


def rank_along_orbit(
    sys: MappedSystem,
    m0,
    n_words: int = 20,
    tol: float = 1e-7,
    seed: int = 0,
    max_len: int = 4,
    t_max: float = 1.0,
    opts: FlowOptions | None = None,
) -> RankReport:
    """Restricted rank of ``Dphi`` at ``m0`` and at the ends of random F0-words.

    The rank is taken on the orbit's tangent space: a map constant on an
    orbit (``x^2 + y^2`` on circles) has rank 0 there even though ``Dphi``
    does not vanish.
    """
    opts = opts or DEFAULT_OPTIONS
    x = sys.phi.domain.check_point(m0)
    rng = np.random.default_rng(seed)
    words = random_words(rng, len(sys.F0), n_words, max_len, t_max)
    points = [x]
    skipped = 0
    for w in words:
        try:
            points.append(flow_word(sys.F0, w, x, opts))
        except Incomplete as exc:
            if exc.declared_complete:
                raise
            skipped += 1
            log.info("rank_along_orbit: word %s skipped: %s", w.to_text(), exc)
    ranks = [restricted_rank(sys, p, tol, seed=seed, opts=opts) for p in points]
    return RankReport(ranks, len(set(ranks)) == 1, skipped)


def lift_word(sys: MappedSystem, w1: FlowWord) -> FlowWord:
    """Replace each F1 letter by its first-listed F0 pre-image; durations are kept."""
    w1.validate(sys.F1)
    return FlowWord(tuple((sys.lift_index(i), t) for i, t in w1.letters))


def semiconjugacy_residual(sys: MappedSystem, w1: FlowWord, u, opts: FlowOptions | None = None) -> float:
    """``|phi(flow(F0, lift(w1), u)) - flow(F1, w1, phi(u))|``."""
    up = flow_word(sys.F0, lift_word(sys, w1), u, opts)
    down = flow_word(sys.F1, w1, sys.phi(u), opts)
    return sys.phi.codomain.distance(sys.phi(up), down)


# ---------------------------------------------------------------------------
# trivializations


@dataclass
class FiberSample:
    points: np.ndarray
    words: list[FlowWord]
    dimension: int
    candidates: int
    rejected: int
    cell: float

    def to_csv(self, path: str | Path) -> Path:
        return write_cloud_csv(path, self.points, self.words)

    def as_dict(self) -> dict:
        return {
            "points": len(self.points),
            "dimension": self.dimension,
            "candidates": self.candidates,
            "rejected": self.rejected,
            "cell": self.cell,
        }


@dataclass(eq=False)
class Trivialization:
    system: MappedSystem
    chart: DistinguishedChart
    lifted: tuple[int, ...]
    u0star: np.ndarray
    fiber: FiberSample | None = None
    opts: FlowOptions = DEFAULT_OPTIONS

    @property
    def m1(self) -> np.ndarray:
        return self.chart.base

    @property
    def k(self) -> int:
        return self.chart.k

    def lifted_word(self, t) -> FlowWord:
        return FlowWord(tuple((j, float(tj)) for j, tj in zip(self.lifted, t)))

    def as_dict(self) -> dict:
        return {
            "chart": self.chart.as_dict(),
            "lifted_fields": [self.system.F0[i].name for i in self.lifted],
            "u0star": self.u0star.tolist(),
            "fiber": self.fiber.as_dict() if self.fiber is not None else None,
        }


def _box_grid(half_widths: np.ndarray) -> np.ndarray:
    k = len(half_widths)
    return np.array(list(itertools.product([-1.0, 0.0, 1.0], repeat=k))) * half_widths


def _probe(triv: Trivialization) -> float:
    """Flow the lifted chart words over a ``3^k`` grid of the box from ``u0star``.

    Returns the worst semiconjugacy residual; raises the diagnosed
    :class:`TrivializationError` on incompleteness or a defect.
    """
    sys = triv.system
    worst = 0.0
    for t in _box_grid(triv.chart.half_widths):
        w = triv.lifted_word(t)
        try:
            up = flow_word(sys.F0, w, triv.u0star, triv.opts)
        except Incomplete as exc:
            raise TrivializationError(
                "incomplete",
                f"lifted chart word {w.to_text()} from {triv.u0star.tolist()}: {exc}",
                {"word": w.to_text(), "incomplete": exc.as_dict()},
            ) from exc
        r = sys.phi.codomain.distance(sys.phi(up), chart_point(triv.chart, t))
        worst = max(worst, r)
        if r > LIFT_DEFECT_TOL:
            raise TrivializationError(
                "lift-defect",
                f"lifted chart word {w.to_text()} misses the chart point by {r:.3g}",
                {"word": w.to_text(), "residual": r},
            )
    return worst


def build_trivialization(
    sys: MappedSystem,
    m1,
    u0star,
    bracket_depth: int = 4,
    box: float = 1.0,
    push_t_max: float = 1.0,
    fiber_budget: int = 2000,
    fiber_cell: float = 0.05,
    fiber_max_len: int = 6,
    fiber_t_max: float = 1.0,
    seed: int = 0,
    workers: int = 1,
    opts: FlowOptions | None = None,
    sample: bool = True,
) -> Trivialization:
    """Chart at ``m1`` from liftable generators, lifts, probe and fiber sample."""
    opts = opts or DEFAULT_OPTIONS
    x1 = sys.phi.codomain.check_point(m1)
    u = sys.phi.domain.check_point(u0star)
    gap = sys.phi.codomain.distance(sys.phi(u), x1)
    if gap > BASE_POINT_TOL:
        raise TrivializationError("base-point", f"phi(u0star) misses m1 by {gap:.3g}", {"gap": gap})
    try:
        chart = distinguished_chart(
            sys.F1, x1, bracket_depth, generators_only=True, box=box, push_t_max=push_t_max, seed=seed, opts=opts
        )
    except ChartError as exc:
        kind = "dimension" if "is 0" in str(exc) else "no-lift"
        raise TrivializationError(kind, str(exc)) from exc
    except Incomplete as exc:
        raise TrivializationError("incomplete", f"downstairs chart: {exc}", {"incomplete": exc.as_dict()}) from exc
    lifted = tuple(sys.lift_index(d.index) for d in chart.descriptors)
    triv = Trivialization(sys, chart, lifted, u.copy(), None, opts)
    _probe(triv)
    if sample:
        triv.fiber = sample_fiber(
            sys, x1, u, fiber_budget, cell=fiber_cell, max_len=fiber_max_len, t_max=fiber_t_max,
            seed=seed, workers=workers, opts=opts, triv=triv,
        )
    return triv


@dataclass
class FiberCoordinate:
    t: np.ndarray
    z: np.ndarray
    residual: float
    iterations: int


def fiber_coordinate(triv: Trivialization, u0, max_iter: int = 30) -> FiberCoordinate:
    """Split ``u0`` into chart coordinates ``t`` of ``phi(u0)`` and a fiber point ``z``.

    ``t`` solves ``chart_point(t) = phi(u0)`` by Gauss-Newton from ``t = 0``
    (stop when ``|step| < 1e-11``; the residual must end below 1e-9), never
    leaving the parameter box.  Then ``z = e^{-tk Yk} ... e^{-t1 Y1} u0``.
    """
    sys, chart = triv.system, triv.chart
    x = sys.phi.domain.check_point(u0)
    target = sys.phi(x)
    cod = sys.phi.codomain
    t = np.zeros(chart.k)
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        r = cod.displacement(target, chart_point(chart, t))
        J = chart_jacobian(chart, t)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        t_new = t + step
        if not chart.in_box(t_new):
            raise FiberCoordinateError(
                f"chart inversion for phi(u0) = {target.tolist()} left the box at t = {t_new.tolist()}"
            )
        t = t_new
        if float(np.linalg.norm(step)) < 1e-11:
            converged = True
            break
    residual = cod.distance(chart_point(chart, t), target)
    if not converged and residual >= 1e-9:
        raise FiberCoordinateError(f"chart inversion did not converge in {max_iter} iterations (residual {residual:.3g})")
    if residual >= 1e-9:
        raise FiberCoordinateError(f"chart inversion stalled at residual {residual:.3g}")
    z = flow_word(sys.F0, triv.lifted_word(t).inverse(), x, triv.opts)
    return FiberCoordinate(t, z, residual, it)


def sample_fiber(
    sys: MappedSystem,
    m1,
    u0star,
    budget: int,
    cell: float = 0.05,
    max_len: int = 6,
    t_max: float = 1.0,
    seed: int = 0,
    workers: int = 1,
    opts: FlowOptions | None = None,
    triv: Trivialization | None = None,
) -> FiberSample:
    """Points of the fiber over ``m1`` reached from ``u0star``.

    Upstairs orbit samples with ``|phi(u) - m1| < 10 cell`` are moved onto
    the exact fiber with :func:`fiber_coordinate`; those whose chart
    inversion fails are counted as rejected.  The cloud always contains
    ``u0star``.
    """
    x1 = sys.phi.codomain.check_point(m1)
    u = sys.phi.domain.check_point(u0star)
    if triv is None:
        triv = build_trivialization(sys, x1, u, seed=seed, opts=opts, sample=False)
    cloud = sample_orbit(sys.F0, u, budget, max_len=max_len, t_max=t_max, cell=cell, seed=seed, workers=workers, opts=opts)
    cod = sys.phi.codomain
    near = [(p, w) for p, w in zip(cloud.points, cloud.words) if cod.distance(sys.phi(p), x1) < 10.0 * cell]
    pts = [u]
    words = [FlowWord()]
    rejected = 0
    for p, w in near:
        try:
            fc = fiber_coordinate(triv, p)
        except (FiberCoordinateError, BoxError, Incomplete) as exc:
            rejected += 1
            log.debug("fiber sample rejected: %s", exc)
            continue
        pts.append(fc.z)
        # z = e^{-t Y} applied after w, as one F0-word from u0star
        words.append(FlowWord(triv.lifted_word(fc.t).inverse().letters + w.letters))
    arr = np.array(pts)
    keep = dedup(sys.phi.domain, arr, cell, merge=1e-8)
    arr = arr[keep]
    if len(arr) == 1:
        log.info("fiber sample over %s has a single point", x1.tolist())
    dim = local_pca_dimension(sys.phi.domain, arr, cell)
    return FiberSample(arr, [words[i] for i in keep], dim, len(near), rejected, cell)


@dataclass
class VerifyReport:
    max_round_trip: float
    max_landing: float
    max_fiber_shift: float
    n_samples: int
    failures: int
    tol: float
    passed: bool
    worst_sample: list | None = field(default=None)

    def as_dict(self) -> dict:
        return {
            "max_round_trip": self.max_round_trip,
            "max_landing": self.max_landing,
            "max_fiber_shift": self.max_fiber_shift,
            "n_samples": self.n_samples,
            "failures": self.failures,
            "tol": self.tol,
            "pass": self.passed,
            "worst_sample": self.worst_sample,
        }


def sample_u0(triv: Trivialization, n: int, seed: int = 0, shrink: float = 0.9) -> np.ndarray:
    """Points ``e^{t1 Y1} ... e^{tk Yk} z`` with ``t`` uniform in the shrunk box and ``z`` from the fiber cloud."""
    rng = np.random.default_rng(seed)
    fiber = triv.fiber.points if triv.fiber is not None else triv.u0star[None, :]
    hw = triv.chart.half_widths * shrink
    out = []
    for _ in range(n):
        t = rng.uniform(-hw, hw)
        z = fiber[int(rng.integers(len(fiber)))]
        out.append(flow_word(triv.system.F0, triv.lifted_word(t), z, triv.opts))
    return np.array(out)


def verify_trivialization(triv: Trivialization, n_samples: int = 100, tol: float = 1e-6, seed: int = 0, samples=None) -> VerifyReport:
    """Round trip ``u0 -> (t, z) -> e^{t Y} z`` and fiber landing over sampled ``u0``.

    Passes iff the worst round-trip error is at most ``tol`` and every ``z``
    lands within 1e-7 of ``m1``.  Chart inversion failures are counted and
    make the check fail.
    """
    sys = triv.system
    pts = sample_u0(triv, n_samples, seed) if samples is None else np.atleast_2d(samples)
    dom, cod = sys.phi.domain, sys.phi.codomain
    worst_rt = worst_land = worst_shift = 0.0
    worst_p = None
    failures = 0
    fiber = triv.fiber.points if triv.fiber is not None else triv.u0star[None, :]
    for p in pts:
        try:
            fc = fiber_coordinate(triv, p)
            back = flow_word(sys.F0, triv.lifted_word(fc.t), fc.z, triv.opts)
        except (FiberCoordinateError, BoxError, Incomplete) as exc:
            failures += 1
            log.info("verify: sample %s failed: %s", p.tolist(), exc)
            continue
        rt = dom.distance(back, p)
        if rt >= worst_rt:
            worst_rt, worst_p = rt, p.tolist()
        worst_land = max(worst_land, cod.distance(sys.phi(fc.z), triv.m1))
        worst_shift = max(worst_shift, float(min(dom.distance(fc.z, q) for q in fiber)))
    passed = failures == 0 and worst_rt <= tol and worst_land <= LANDING_TOL
    return VerifyReport(worst_rt, worst_land, worst_shift, len(pts), failures, tol, passed, worst_p)


def overlap_consistency(triv_a: Trivialization, triv_b: Trivialization, samples) -> dict:
    """Compare two trivializations on points both can invert.

    For each shared sample ``u`` this measures how well ``triv_a`` and
    ``triv_b`` agree on the base point (``chart_a(t_a)`` against
    ``chart_b(t_b)``) and whether the transition ``z_a -> z_b``, built purely
    from flows as ``z_b = e^{-t_b Y^b} e^{t_a Y^a} z_a``, reproduces the
    directly computed ``z_b``.  The maximum of both discrepancies is
    reported.
    """
    sys = triv_a.system
    dom, cod = sys.phi.domain, sys.phi.codomain
    worst = 0.0
    shared = 0
    for u in np.atleast_2d(samples):
        try:
            fa = fiber_coordinate(triv_a, u)
            fb = fiber_coordinate(triv_b, u)
        except (FiberCoordinateError, BoxError, Incomplete):
            continue
        shared += 1
        base = cod.distance(chart_point(triv_a.chart, fa.t), chart_point(triv_b.chart, fb.t))
        up = flow_word(sys.F0, triv_a.lifted_word(fa.t), fa.z, triv_a.opts)
        zb = flow_word(sys.F0, triv_b.lifted_word(fb.t).inverse(), up, triv_b.opts)
        worst = max(worst, base, dom.distance(zb, fb.z))
    return {"shared_samples": shared, "max_discrepancy": worst}

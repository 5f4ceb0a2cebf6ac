"""Orbit dimension, distinguished charts and randomized orbit sampling."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .expr import DomainError
from .fields import Family, VectorField, push_forward
from .flow import DEFAULT_OPTIONS, FlowOptions, FlowWord, Incomplete, flow_words, random_words
from .geometry import Space, tangent_projector

log = logging.getLogger(__name__)

RANK_ABS_FLOOR = 1e-12
# clouds narrower than this are treated as a single point
POINT_SPREAD = 1e-9


class ChartError(RuntimeError):
    pass


class BoxError(ValueError):
    pass


def numerical_rank(A: np.ndarray, rel_tol: float = 1e-7, scale: float | None = None) -> int:
    """Count singular values above ``rel_tol * scale`` (default scale: sigma_max).

    An absolute floor of 1e-12 makes the all-zero matrix rank 0.
    """
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    ref = s[0] if scale is None else max(scale, s[0] if s.size else 0.0)
    return int(np.sum(s > max(rel_tol * ref, RANK_ABS_FLOOR)))


def greedy_independent(columns: Sequence[np.ndarray], threshold: float) -> list[int]:
    """Indices of columns accepted in order when their residual exceeds ``threshold``.

    The residual is the norm left after projecting on the columns already
    accepted (pivoted Gram-Schmidt with the natural column order).
    """
    basis: list[np.ndarray] = []
    picked: list[int] = []
    for j, c in enumerate(columns):
        r = np.asarray(c, dtype=float).copy()
        for _ in range(2):
            for b in basis:
                r -= (b @ r) * b
        nr = float(np.linalg.norm(r))
        if nr > threshold:
            basis.append(r / nr)
            picked.append(j)
    return picked


@dataclass
class OrbitDimension:
    k: int
    witnesses: list[str]
    closure_rank: int
    push_rank: int
    skipped_words: int
    columns: np.ndarray = field(repr=False)
    descriptors: list[str] = field(repr=False)

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "certified": f">= {self.k}",
            "closure_rank": self.closure_rank,
            "push_rank": self.push_rank,
            "witnesses": self.witnesses,
            "skipped_push_words": self.skipped_words,
        }


def orbit_dimension(
    F: Family,
    p,
    bracket_depth: int = 4,
    push_words: int = 64,
    push_len: int = 3,
    push_t_max: float = 1.0,
    rank_rel_tol: float = 1e-7,
    seed: int = 0,
    opts: FlowOptions | None = None,
) -> OrbitDimension:
    """Rank at ``p`` of bracket-closure terms and pushed-around generators.

    The result is a lower bound for the true orbit dimension ("certified >=
    k").  Push words that run into :class:`Incomplete` are skipped; if every
    one of them fails, the last error is raised.  A failure of a field that
    was declared complete is always raised.
    """
    x = F.space.check_point(p)
    opts = opts or DEFAULT_OPTIONS
    cols: list[np.ndarray] = []
    desc: list[str] = []
    for term in F.closure(bracket_depth):
        try:
            v = term.field(x)
        except DomainError:
            continue
        cols.append(v)
        desc.append(f"gen:{term.tree}" if term.is_generator else f"bracket:{term.text}")
    n_closure = len(cols)

    skipped = 0
    last_error: Incomplete | None = None
    if push_words > 0:
        rng = np.random.default_rng(seed)
        words = random_words(rng, len(F), push_words, push_len, push_t_max)
        for w_idx, w in enumerate(words):
            try:
                V = push_forward(F, w, F.fields, x, opts)
            except Incomplete as exc:
                if exc.declared_complete:
                    raise
                skipped += 1
                last_error = exc
                log.debug("push word %d skipped: %s", w_idx, exc)
                continue
            for g, v in enumerate(V):
                cols.append(v)
                desc.append(f"push[{w.to_text()}]:gen:{g}")
        if skipped == len(words) and last_error is not None:
            raise last_error
        if skipped:
            log.info("orbit_dimension: %d of %d push words skipped (Incomplete)", skipped, len(words))

    n = F.space.dim
    A = np.array(cols).T if cols else np.zeros((n, 0))
    k = numerical_rank(A, rank_rel_tol)
    closure_rank = numerical_rank(A[:, :n_closure], rank_rel_tol)
    push_rank = numerical_rank(A[:, n_closure:], rank_rel_tol)
    smax = float(np.linalg.svd(A, compute_uv=False)[0]) if A.size else 0.0
    picked = greedy_independent(list(A.T), max(rank_rel_tol * smax, RANK_ABS_FLOOR)) if k else []
    return OrbitDimension(k, [desc[j] for j in picked[:k]], closure_rank, push_rank, skipped, A, desc)


# ---------------------------------------------------------------------------
# distinguished charts


@dataclass(frozen=True)
class Descriptor:
    kind: str  # "generator" or "bracket"
    index: int  # generator index, or position in the bracket closure
    text: str

    def as_dict(self) -> dict:
        return {"kind": self.kind, "index": self.index, "text": self.text}


@dataclass(eq=False)
class DistinguishedChart:
    family: Family
    base: np.ndarray
    descriptors: tuple[Descriptor, ...]
    fields: tuple[VectorField, ...]
    half_widths: np.ndarray
    jacobian0: np.ndarray
    opts: FlowOptions = DEFAULT_OPTIONS

    def __post_init__(self):
        self.chart_family = Family(f"{self.family.name}/chart", tuple(
            VectorField(f"{d.text}#{j}", self.family.space, f.components, f.declared_complete)
            for j, (d, f) in enumerate(zip(self.descriptors, self.fields))
        ))

    @property
    def k(self) -> int:
        return len(self.descriptors)

    @property
    def space(self) -> Space:
        return self.family.space

    def word(self, t) -> FlowWord:
        return FlowWord(tuple((j, float(tj)) for j, tj in enumerate(t)))

    def in_box(self, t, slack: float = 1e-12) -> bool:
        return bool(np.all(np.abs(np.asarray(t, dtype=float)) <= self.half_widths + slack))

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "base": self.base.tolist(),
            "descriptors": [d.as_dict() for d in self.descriptors],
            "half_widths": self.half_widths.tolist(),
        }


def chart_point(c: DistinguishedChart, t) -> np.ndarray:
    """``e^{t1 X1} ... e^{tk Xk}(m0)`` for ``t`` inside the parameter box."""
    from .flow import flow_word

    t = np.asarray(t, dtype=float).reshape(-1)
    if t.shape[0] != c.k:
        raise BoxError(f"chart has {c.k} parameters, got {t.shape[0]}")
    if not c.in_box(t):
        raise BoxError(f"parameters {t.tolist()} outside box of half-widths {c.half_widths.tolist()}")
    return flow_word(c.chart_family, c.word(t), c.base, c.opts)


def chart_jacobian(c: DistinguishedChart, t) -> np.ndarray:
    """Exact (to integration accuracy) derivative of the chart map, shape ``(n, k)``.

    Column i is ``D(e^{t1 X1} o ... o e^{t(i-1) X(i-1)}) X_i`` evaluated after
    letter i, built from the variational Jacobians of each letter.
    """
    from .flow import flow_with_jacobian

    t = np.asarray(t, dtype=float).reshape(-1)
    k, n = c.k, c.space.dim
    points = [None] * k
    mats = [None] * k
    cur = c.base
    for i in range(k - 1, -1, -1):
        cur, M = flow_with_jacobian(c.fields[i], float(t[i]), cur, c.opts)
        points[i], mats[i] = cur, M
    J = np.empty((n, k))
    P = np.eye(n)
    for i in range(k):
        J[:, i] = P @ c.fields[i](points[i])
        P = P @ mats[i]
    if c.space.is_constrained:
        J = tangent_projector(c.space, chart_point(c, t)) @ J
    return J


def _chart_ok(c: DistinguishedChart, cond_max: float) -> bool:
    k = c.k
    corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * k, indexing="ij")).reshape(k, -1).T * c.half_widths
    for t in corners:
        s = np.linalg.svd(chart_jacobian(c, t), compute_uv=False)
        if s[-1] <= 0 or s[0] / s[-1] >= cond_max:
            return False
    grid = np.array(np.meshgrid(*[[-1.0, 0.0, 1.0]] * k, indexing="ij")).reshape(k, -1).T * c.half_widths
    imgs = [chart_point(c, t) for t in grid]
    for a in range(len(imgs)):
        for b in range(a + 1, len(imgs)):
            if c.space.distance(imgs[a], imgs[b]) <= 1e-9:
                return False
    return True


def distinguished_chart(
    F: Family,
    m0,
    bracket_depth: int = 4,
    generators_only: bool = False,
    box: float = 1.0,
    cond_max: float = 1e3,
    rank_rel_tol: float = 1e-7,
    push_words: int = 64,
    push_len: int = 3,
    push_t_max: float = 1.0,
    seed: int = 0,
    opts: FlowOptions | None = None,
) -> DistinguishedChart:
    """Greedy chart ``t -> e^{t1 X1} ... e^{tk Xk}(m0)`` with a conditioned box.

    Generators are preferred over bracket terms.  The box half-width starts
    at ``box`` and is halved until the Jacobian condition number at the
    ``2^k`` corners is below ``cond_max`` and a ``3^k`` grid maps
    injectively; below 1e-6 the sweep gives up.
    """
    opts = opts or DEFAULT_OPTIONS
    x = F.space.check_point(m0)
    od = orbit_dimension(F, x, bracket_depth, push_words, push_len, push_t_max, rank_rel_tol, seed, opts)
    if od.k == 0:
        raise ChartError(f"orbit dimension of {F.name!r} at {x.tolist()} is 0")
    cands: list[tuple[Descriptor, VectorField]] = [
        (Descriptor("generator", i, f.name), f) for i, f in enumerate(F)
    ]
    if not generators_only:
        for j, term in enumerate(F.closure(bracket_depth)):
            if not term.is_generator:
                cands.append((Descriptor("bracket", j, term.text), term.field))
    values = []
    for d, f in cands:
        try:
            values.append(f(x))
        except DomainError:
            values.append(np.zeros(F.space.dim))
    smax = float(np.linalg.svd(od.columns, compute_uv=False)[0]) if od.columns.size else 0.0
    picked = greedy_independent(values, max(rank_rel_tol * smax, RANK_ABS_FLOOR))[: od.k]
    if len(picked) < od.k:
        what = "generators" if generators_only else "generators and bracket terms"
        raise ChartError(
            f"{what} of {F.name!r} span {len(picked)} directions at {x.tolist()} but the orbit dimension is {od.k}"
        )
    descs = tuple(cands[j][0] for j in picked)
    fields = tuple(cands[j][1] for j in picked)
    k = len(picked)
    J0 = np.array([values[j] for j in picked]).T
    h = float(box)
    while h >= 1e-6:
        c = DistinguishedChart(F, x.copy(), descs, fields, np.full(k, h), J0, opts)
        try:
            if _chart_ok(c, cond_max):
                return c
        except Incomplete:
            pass
        h /= 2.0
    raise ChartError(f"conditioning sweep exhausted for {F.name!r} at {x.tolist()}")


# ---------------------------------------------------------------------------
# sampling


def _cell_key(space: Space, x: np.ndarray, cell: float) -> tuple:
    y = space.wrap(x)
    per = space.period_array
    key = np.floor(y / cell).astype(np.int64)
    mask = per > 0
    if mask.any():
        ncell = np.ceil(per[mask] / cell - 1e-9).astype(np.int64)
        key[mask] = np.mod(key[mask], ncell)
    return tuple(key.tolist())


def dedup(space: Space, points: np.ndarray, cell: float, merge: float = 0.0) -> list[int]:
    """Indices of the first point landing in each cell of the spatial hash.

    With ``merge > 0`` a point within ``merge`` of an earlier kept point is
    also dropped, so rounding noise straddling a cell wall does not count as
    a new point.
    """
    seen: set[tuple] = set()
    keep: list[int] = []
    for i, x in enumerate(points):
        key = _cell_key(space, x, cell)
        if key in seen:
            continue
        if merge > 0.0 and any(space.distance(points[j], x) <= merge for j in keep):
            continue
        seen.add(key)
        keep.append(i)
    return keep


def _neighbour_counts(space: Space, pts: np.ndarray, radius: float) -> np.ndarray:
    per = space.period_array
    counts = np.empty(len(pts), dtype=np.int64)
    chunk = max(1, 200000 // max(1, len(pts) * pts.shape[1]))
    for lo in range(0, len(pts), chunk):
        d = pts[None, :, :] - pts[lo : lo + chunk, None, :]
        mask = per > 0
        if mask.any():
            d[..., mask] -= per[mask] * np.round(d[..., mask] / per[mask])
        counts[lo : lo + chunk] = np.sum(np.einsum("abk,abk->ab", d, d) <= radius * radius, axis=1)
    return counts


def _quadratic_features(u: np.ndarray) -> np.ndarray:
    cols = [np.ones(len(u))]
    d = u.shape[1]
    cols.extend(u[:, i] for i in range(d))
    cols.extend(u[:, i] * u[:, j] for i in range(d) for j in range(i, d))
    return np.column_stack(cols)


def local_pca_dimension(space: Space, pts: np.ndarray, cell: float, cutoff: float = 1e-3) -> int:
    """Local PCA dimension at the densest point of a deduplicated cloud.

    The neighbourhood is the ball of radius ``4*cell`` around the point with
    the most neighbours; the dimension counts covariance eigenvalues above
    ``cutoff * lambda_max``.  Curvature of the cloud inflates the normal
    eigenvalues by O(radius^4), so before accepting d directions we test
    whether a smaller d fits: the normal residual of a local quadratic graph
    over the top d principal directions must fall below the same cutoff.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if len(pts) <= 1:
        return 0
    radius = 4.0 * cell
    counts = _neighbour_counts(space, pts, radius)
    center = pts[int(np.argmax(counts))]
    d = np.array([space.displacement(center, q) for q in pts])
    nb = d[np.einsum("ij,ij->i", d, d) <= radius * radius]
    if len(nb) < 2:
        return 0
    X = nb - nb.mean(axis=0)
    lam, V = np.linalg.eigh(X.T @ X / len(X))
    order = np.argsort(lam)[::-1]
    lam, V = lam[order], V[:, order]
    if lam[0] <= POINT_SPREAD**2:
        return 0
    dim = int(np.sum(lam > cutoff * lam[0]))
    for trial in range(1, dim):
        Q = _quadratic_features(X @ V[:, :trial])
        if len(X) < 2 * Q.shape[1] + 2:
            break
        R = X - (X @ V[:, :trial]) @ V[:, :trial].T
        coef, *_ = np.linalg.lstsq(Q, R, rcond=None)
        res = R - Q @ coef
        mu = np.linalg.eigvalsh(res.T @ res / len(res))
        if mu[-1] <= cutoff * lam[0]:
            return trial
    return dim


@dataclass
class OrbitSample:
    space: Space
    points: np.ndarray
    words: list[FlowWord]
    dimension: int
    seed: int
    cell: float
    budget: int
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.points)

    def point_set(self) -> set[tuple[float, ...]]:
        return {tuple(p.tolist()) for p in self.points}

    def to_csv(self, path: str | Path) -> Path:
        return write_cloud_csv(path, self.points, self.words)

    def summary(self) -> dict:
        return {
            "points": len(self.points),
            "dimension": self.dimension,
            "budget": self.budget,
            "dropped_incomplete": self.dropped,
            "cell": self.cell,
            "seed": self.seed,
        }


def write_cloud_csv(path: str | Path, points: np.ndarray, words: Sequence[FlowWord]) -> Path:
    """Header ``c1,...,cn,word``; coordinates and durations with 17 significant digits."""
    path = Path(path)
    points = np.atleast_2d(points)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"c{i + 1}" for i in range(points.shape[1])] + ["word"])
        for p, word in zip(points, words):
            w.writerow([f"{v:.17g}" for v in p] + [word.to_text()])
    return path


def read_cloud_csv(path: str | Path) -> tuple[np.ndarray, list[FlowWord]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    pts = np.array([[float(v) for v in r[:-1]] for r in rows[1:]])
    words = [FlowWord.from_text(r[-1]) for r in rows[1:]]
    return pts, words


def sample_orbit(
    F: Family,
    m0,
    budget: int,
    max_len: int = 6,
    t_max: float = 1.0,
    cell: float = 0.05,
    seed: int = 0,
    workers: int = 1,
    opts: FlowOptions | None = None,
) -> OrbitSample:
    """Random flow words from ``m0``, deduplicated on a ``cell`` grid.

    The word list is drawn up front from ``seed``, so the deduplicated point
    set does not depend on ``workers``.  The base point itself (empty word)
    is always the first point.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    x = F.space.check_point(m0)
    rng = np.random.default_rng(seed)
    words = random_words(rng, len(F), budget, max_len, t_max)
    batch = flow_words(F, words, x, opts, workers)
    ok = batch.ok
    for k in np.flatnonzero(~ok):
        err = batch.error(F, words, int(k))
        if err.declared_complete:
            raise err
    all_words = [FlowWord()] + [w for w, good in zip(words, ok) if good]
    pts = np.vstack([F.space.wrap(x)[None, :], batch.points[ok]])
    keep = dedup(F.space, pts, cell)
    pts = pts[keep]
    kept_words = [all_words[i] for i in keep]
    dim = local_pca_dimension(F.space, pts, cell)
    return OrbitSample(F.space, pts, kept_words, dim, seed, cell, budget, int((~ok).sum()))

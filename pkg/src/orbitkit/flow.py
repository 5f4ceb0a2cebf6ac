"""Numerical flows, flow words and variational Jacobians.

Flow words act rightmost letter first: ``[(i1, t1), ..., (ik, tk)]`` applied
to ``m`` is ``e^{t1 X_i1} ... e^{tk X_ik}(m)``.  Field indices are 0-based.

Escape of the state norm, leaving the open domain, a non-finite right-hand
side or step-size underflow all raise :class:`Incomplete`; this is the
computational witness that a field is not complete.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as K
from .fields import Family, VectorField
from .geometry import Space, contains

METHODS = {"rk45_adaptive": K.METHOD_RK45, "rk4_fixed": K.METHOD_RK4}
REASONS = {
    K.STATUS_ESCAPE: "escape",
    K.STATUS_DOMAIN: "domain",
    K.STATUS_UNDERFLOW: "step-underflow",
    K.STATUS_NONFINITE: "non-finite",
    K.STATUS_RETRACT: "retraction",
}


@dataclass(frozen=True)
class FlowOptions:
    method: str = "rk45_adaptive"
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_step: float = 0.1
    escape_norm: float = 1e6
    retract_every_step: bool | None = None  # None: on for constrained spaces

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {sorted(METHODS)}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if not self.escape_norm > 0:
            raise ValueError("escape_norm must be positive")

    def updated(self, **changes) -> "FlowOptions":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes) if changes else self

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "rtol": self.rel_tol,
            "atol": self.abs_tol,
            "max_step": self.max_step,
            "escape_norm": self.escape_norm,
        }


DEFAULT_OPTIONS = FlowOptions()


class Incomplete(RuntimeError):
    """A flow could not be continued for the requested time."""

    def __init__(
        self,
        field: str,
        time_requested: float,
        time_reached: float,
        reason: str,
        letter: int | None = None,
        declared_complete: bool = False,
    ):
        where = f" (word letter {letter})" if letter is not None else ""
        msg = f"flow of {field!r}{where} stopped at t={time_reached:.6g} of {time_requested:.6g}: {reason}"
        if declared_complete:
            msg += "; field was declared complete"
        super().__init__(msg)
        self.field = field
        self.time_requested = time_requested
        self.time_reached = time_reached
        self.reason = reason
        self.letter = letter
        self.declared_complete = declared_complete

    def as_dict(self) -> dict:
        return {
            "error": "Incomplete",
            "field": self.field,
            "reason": self.reason,
            "time_requested": self.time_requested,
            "time_reached": self.time_reached,
            "letter": self.letter,
            "declared_complete": self.declared_complete,
        }


@dataclass(frozen=True)
class FlowWord:
    letters: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "letters", tuple((int(i), float(t)) for i, t in self.letters))

    def __len__(self) -> int:
        return len(self.letters)

    def __iter__(self):
        return iter(self.letters)

    def inverse(self) -> "FlowWord":
        return FlowWord(tuple((i, -t) for i, t in reversed(self.letters)))

    def to_text(self) -> str:
        return ";".join(f"{i}:{t:.17g}" for i, t in self.letters)

    @classmethod
    def from_text(cls, text: str) -> "FlowWord":
        if not text.strip():
            return cls()
        letters = []
        for part in text.split(";"):
            i, t = part.split(":")
            letters.append((int(i), float(t)))
        return cls(tuple(letters))

    def validate(self, F: Family):
        for i, _ in self.letters:
            if not 0 <= i < len(F):
                raise IndexError(f"word letter index {i} out of range for family {F.name!r} of size {len(F)}")


def inverse_word(w: FlowWord) -> FlowWord:
    """Reverse the letters and negate the durations."""
    return w.inverse()


# ---------------------------------------------------------------------------


def _geo(space: Space, opts: FlowOptions):
    geo = space.geo
    if opts.retract_every_step is False:
        geo = (K.RETRACT_NONE,) + geo[1:]
    return geo


def _stack_size(numeric, space: Space) -> int:
    progs = [numeric[0], numeric[1], space.geo[2], space.geo[3], space.geo[5]]
    return max(p[0].shape[0] for p in progs) + 1


def _check_start(space: Space, x: np.ndarray):
    if not contains(space, x, 1e-6):
        raise ValueError(f"start point {x.tolist()} is not in space {space.name!r}")


def _run(X: VectorField, t: float, y: np.ndarray, with_jac: bool, opts: FlowOptions):
    fam, jac, _, _ = X.numeric
    stack = np.empty(_stack_size(X.numeric, X.space))
    status, reached, _ = K.integrate(
        fam, jac, 0, X.space.dim, y, float(t), with_jac, METHODS[opts.method],
        opts.rel_tol, opts.abs_tol, opts.max_step, opts.escape_norm, _geo(X.space, opts), stack,
    )
    if status != K.STATUS_OK:
        raise Incomplete(X.name, float(t), float(reached), REASONS[status], declared_complete=X.declared_complete)


def flow(X: VectorField, t: float, p, opts: FlowOptions | None = None) -> np.ndarray:
    """``e^{tX}(p)`` for signed ``t``."""
    opts = opts or DEFAULT_OPTIONS
    x = X.space.check_point(p)
    _check_start(X.space, x)
    y = x.copy()
    if t == 0.0 or X.is_zero:
        return y
    _run(X, t, y, False, opts)
    return y


def flow_with_jacobian(X: VectorField, t: float, p, opts: FlowOptions | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``e^{tX}(p)`` together with ``D e^{tX}(p)`` from the variational equation."""
    opts = opts or DEFAULT_OPTIONS
    n = X.space.dim
    x = X.space.check_point(p)
    _check_start(X.space, x)
    if t == 0.0 or X.is_zero:
        return x.copy(), np.eye(n)
    y = np.concatenate([x, np.eye(n).reshape(-1)])
    _run(X, t, y, True, opts)
    return y[:n].copy(), y[n:].reshape(n, n).copy()


@dataclass
class WordBatch:
    points: np.ndarray
    status: np.ndarray
    failing_letter: np.ndarray
    time_reached: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.status == K.STATUS_OK

    def error(self, F: Family, words: Sequence[FlowWord], k: int) -> Incomplete:
        letter = int(self.failing_letter[k])
        f_idx, t = words[k].letters[letter]
        field = F[f_idx]
        return Incomplete(field.name, t, float(self.time_reached[k]), REASONS[int(self.status[k])],
                          letter=letter, declared_complete=field.declared_complete)


def _pack(words: Sequence[FlowWord]):
    nw = len(words)
    width = max([len(w) for w in words] + [1])
    lf = np.zeros((nw, width), dtype=np.int64)
    lt = np.zeros((nw, width))
    lengths = np.zeros(nw, dtype=np.int64)
    for k, w in enumerate(words):
        lengths[k] = len(w)
        for j, (i, t) in enumerate(w.letters):
            lf[k, j] = i
            lt[k, j] = t
    return lf, lt, lengths


def flow_words(
    F: Family,
    words: Sequence[FlowWord],
    starts,
    opts: FlowOptions | None = None,
    workers: int = 1,
) -> WordBatch:
    """Apply many words; ``starts`` is one point or one point per word.

    Words are split into contiguous chunks across ``workers`` threads (the
    kernels release the GIL under numba).  Results do not depend on the
    number of workers.
    """
    opts = opts or DEFAULT_OPTIONS
    space = F.space
    n = space.dim
    for w in words:
        w.validate(F)
    x0 = np.asarray(starts, dtype=float)
    x0s = np.ascontiguousarray(np.broadcast_to(x0, (len(words), n)) if x0.ndim == 1 else x0)
    if len(words) == 0:
        return WordBatch(np.zeros((0, n)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))
    lf, lt, lengths = _pack(words)
    fam, jac, zero, _ = F.numeric
    geo = _geo(space, opts)
    stack_size = _stack_size(F.numeric, space)

    def run(lo: int, hi: int):
        return K.flow_word_batch(
            fam, jac, n, zero, lf[lo:hi], lt[lo:hi], lengths[lo:hi], x0s[lo:hi],
            METHODS[opts.method], opts.rel_tol, opts.abs_tol, opts.max_step, opts.escape_norm, geo, stack_size,
        )

    workers = max(1, int(workers))
    if workers == 1 or len(words) < 2 * workers:
        parts = [run(0, len(words))]
    else:
        bounds = np.linspace(0, len(words), workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: run(*ab), zip(bounds[:-1], bounds[1:])))
    return WordBatch(*(np.concatenate([p[i] for p in parts]) for i in range(4)))


def flow_word(F: Family, w: FlowWord, p, opts: FlowOptions | None = None) -> np.ndarray:
    """``e^{t1 X1} ... e^{tk Xk}(p)``; the rightmost letter acts first."""
    x = F.space.check_point(p)
    _check_start(F.space, x)
    if len(w) == 0:
        w.validate(F)
        return x.copy()
    batch = flow_words(F, [w], x, opts)
    if not batch.ok[0]:
        raise batch.error(F, [w], 0)
    return batch.points[0]


def flow_callable(
    fn: Callable[[np.ndarray], np.ndarray],
    space: Space,
    t: float,
    p,
    opts: FlowOptions | None = None,
) -> np.ndarray:
    """Flow of a field given only pointwise (e.g. a transported field).

    Integrated with scipy's RK45 at the same tolerances; the end point is
    retracted onto the space.
    """
    from scipy.integrate import solve_ivp

    from .geometry import retract

    opts = opts or DEFAULT_OPTIONS
    x = space.check_point(p)
    if t == 0.0:
        return x.copy()

    def escape(_, y):
        return opts.escape_norm - float(np.linalg.norm(y))

    escape.terminal = True
    sol = solve_ivp(
        lambda _, y: np.asarray(fn(y), dtype=float), (0.0, float(t)), x, method="RK45",
        rtol=opts.rel_tol, atol=opts.abs_tol, max_step=opts.max_step, events=escape,
    )
    reached = float(sol.t[-1])
    if sol.status != 0 or not math.isclose(reached, t, rel_tol=0, abs_tol=1e-12):
        reason = "escape" if sol.status == 1 else "step-underflow"
        raise Incomplete("<callable>", float(t), reached, reason)
    return retract(space, sol.y[:, -1])


def random_words(
    rng: np.random.Generator,
    n_fields: int,
    count: int,
    max_len: int,
    t_max: float,
    fields: Iterable[int] | None = None,
) -> list[FlowWord]:
    """Words with uniform letters, durations in ``[-t_max, t_max]`` and length in ``1..max_len``."""
    choices = np.arange(n_fields) if fields is None else np.asarray(list(fields))
    words = []
    for _ in range(count):
        length = int(rng.integers(1, max_len + 1))
        idx = rng.choice(choices, size=length)
        ts = rng.uniform(-t_max, t_max, size=length)
        words.append(FlowWord(tuple(zip(idx.tolist(), ts.tolist()))))
    return words

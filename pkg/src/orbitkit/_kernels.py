"""Hot numeric kernels: expression stack machine, RK integrators, retractions.

Programs are flat postfix encodings of expression lists (see
``orbitkit.expr.compile_exprs``).  A program is the tuple
``(code, args, consts, starts)``; expression ``i`` occupies
``code[starts[i]:starts[i+1]]``.  Vector fields of a family are stored
back to back, so component ``i`` of field ``f`` in dimension ``n`` is
expression ``f*n + i`` and Jacobian entry ``(i, j)`` is ``f*n*n + i*n + j``.

Every kernel reports failure through status codes instead of exceptions so
the same code runs under numba and as plain Python.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.polynomial import polynomial as P

from ._jit import njit

OP_CONST = 0
OP_VAR = 1
OP_NEG = 2
OP_SIN = 3
OP_COS = 4
OP_EXP = 5
OP_LOG = 6
OP_SQRT = 7
OP_BUMP = 8
OP_ADD = 9
OP_SUB = 10
OP_MUL = 11
OP_DIV = 12
OP_POW = 13

STATUS_OK = 0
STATUS_ESCAPE = 1
STATUS_DOMAIN = 2
STATUS_UNDERFLOW = 3
STATUS_NONFINITE = 4
STATUS_RETRACT = 5

RETRACT_NONE = 0
RETRACT_NEWTON = 1
RETRACT_NORMALIZE = 2
RETRACT_ORTHONORMALIZE = 3

METHOD_RK45 = 0
METHOD_RK4 = 1

MIN_STEP = 1e-14
MAX_BUMP_ORDER = 10


def _bump_polynomials(kmax: int) -> np.ndarray:
    # d^k/ds^k bump(s) = P_k(s) / (1 - s^2)^(2k) * bump(s)
    # P_{k+1} = P_k' (1-s^2)^2 + 4 k s (1-s^2) P_k - 2 s P_k
    w = np.array([1.0, 0.0, -1.0])
    s = np.array([0.0, 1.0])
    polys = [np.array([1.0])]
    for k in range(kmax):
        pk = polys[-1]
        term = P.polymul(P.polyder(pk) if len(pk) > 1 else np.array([0.0]), P.polymul(w, w))
        term = P.polyadd(term, 4.0 * k * P.polymul(P.polymul(s, w), pk))
        term = P.polysub(term, 2.0 * P.polymul(s, pk))
        polys.append(term)
    width = max(len(p) for p in polys)
    table = np.zeros((kmax + 1, width))
    for k, p in enumerate(polys):
        table[k, : len(p)] = p
    return table


BUMP_POLY = _bump_polynomials(MAX_BUMP_ORDER)


@njit(cache=True, nogil=True)
def bump_derivative(k, s):
    """k-th derivative of exp(-1/(1-s^2)), exactly zero for |s| >= 1."""
    if not (abs(s) < 1.0):
        return 0.0
    w = 1.0 - s * s
    acc = 0.0
    for j in range(BUMP_POLY.shape[1] - 1, -1, -1):
        acc = acc * s + BUMP_POLY[k, j]
    if k == 0:
        return math.exp(-1.0 / w)
    return acc * math.exp(-1.0 / w - 2.0 * k * math.log(w))


@njit(cache=True, nogil=True)
def eval_expr(code, args, consts, lo, hi, x, stack):
    """Run one postfix expression; NaN signals a domain error."""
    sp = 0
    for pc in range(lo, hi):
        op = code[pc]
        if op == OP_CONST:
            stack[sp] = consts[args[pc]]
            sp += 1
            continue
        if op == OP_VAR:
            stack[sp] = x[args[pc]]
            sp += 1
            continue
        if op <= OP_BUMP:
            a = stack[sp - 1]
            if op == OP_NEG:
                r = -a
            elif op == OP_SIN:
                r = math.sin(a)
            elif op == OP_COS:
                r = math.cos(a)
            elif op == OP_EXP:
                r = math.exp(a) if a < 709.0 else math.inf
            elif op == OP_LOG:
                r = math.log(a) if a > 0.0 else math.nan
            elif op == OP_SQRT:
                r = math.sqrt(a) if a >= 0.0 else math.nan
            else:
                r = bump_derivative(args[pc], a)
            stack[sp - 1] = r
            continue
        b = stack[sp - 1]
        a = stack[sp - 2]
        sp -= 1
        if op == OP_ADD:
            r = a + b
        elif op == OP_SUB:
            r = a - b
        elif op == OP_MUL:
            r = a * b
        elif op == OP_DIV:
            r = a / b if b != 0.0 else math.nan
        else:
            r = _pow(a, b)
        stack[sp - 1] = r
    return stack[0]


@njit(cache=True, nogil=True)
def _pow(a, b):
    if a == 0.0 and b < 0.0:
        return math.nan
    if a < 0.0 and b != math.floor(b):
        return math.nan
    if a < 0.0:
        # integral exponent of a negative base
        mag = abs(a) ** b
        if b - 2.0 * math.floor(0.5 * b) != 0.0:
            return -mag
        return mag
    return a ** b


@njit(cache=True, nogil=True)
def eval_block(prog, first, count, x, out, stack):
    """Evaluate ``count`` consecutive expressions starting at ``first``."""
    code, args, consts, starts = prog
    for i in range(count):
        v = eval_expr(code, args, consts, starts[first + i], starts[first + i + 1], x, stack)
        if not math.isfinite(v):
            return False
        out[i] = v
    return True


@njit(cache=True, nogil=True)
def eval_points(prog, points):
    """Evaluate every expression of ``prog`` at each row of ``points``."""
    code, args, consts, starts = prog
    m = starts.shape[0] - 1
    out = np.empty((points.shape[0], m))
    stack = np.empty(code.shape[0] + 1)
    for r in range(points.shape[0]):
        x = points[r]
        for i in range(m):
            out[r, i] = eval_expr(code, args, consts, starts[i], starts[i + 1], x, stack)
    return out


# --------------------------------------------------------------------------
# geometry helpers shared by the integrators and the Python-level API


@njit(cache=True, nogil=True)
def wrap_periodic(x, periods):
    for i in range(periods.shape[0]):
        p = periods[i]
        if p > 0.0:
            v = x[i] - p * math.floor(x[i] / p)
            if v >= p:
                v -= p
            x[i] = v


@njit(cache=True, nogil=True)
def _gram(X, d, G):
    for i in range(d):
        for j in range(d):
            s = 0.0
            for l in range(d):
                s += X[l, i] * X[l, j]
            G[i, j] = s


@njit(cache=True, nogil=True)
def _orthonormalize(x, n):
    # Newton-Schulz polar iteration X <- X (3I - X^T X) / 2
    d = int(round(math.sqrt(n)))
    X = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            X[i, j] = x[i * d + j]
    G = np.empty((d, d))
    Y = np.empty((d, d))
    for _ in range(40):
        _gram(X, d, G)
        err = 0.0
        for i in range(d):
            for j in range(d):
                e = G[i, j] - (1.0 if i == j else 0.0)
                if abs(e) > err:
                    err = abs(e)
        if err <= 2e-15:
            break
        if err > 0.5:
            return False
        for i in range(d):
            for j in range(d):
                s = 0.0
                for l in range(d):
                    s += X[i, l] * ((1.5 if l == j else 0.0) - 0.5 * G[l, j])
                Y[i, j] = s
        for i in range(d):
            for j in range(d):
                X[i, j] = Y[i, j]
    for i in range(d):
        for j in range(d):
            x[i * d + j] = X[i, j]
    return True


@njit(cache=True, nogil=True)
def solve_small(G, b):
    """Gaussian elimination with partial pivoting; NaN result when singular."""
    m = b.shape[0]
    A = G.copy()
    r = b.copy()
    for c in range(m):
        piv = c
        best = abs(A[c, c])
        for i in range(c + 1, m):
            if abs(A[i, c]) > best:
                best = abs(A[i, c])
                piv = i
        if best == 0.0:
            r[:] = math.nan
            return r
        if piv != c:
            for j in range(m):
                tmp = A[c, j]
                A[c, j] = A[piv, j]
                A[piv, j] = tmp
            tmp = r[c]
            r[c] = r[piv]
            r[piv] = tmp
        for i in range(c + 1, m):
            fct = A[i, c] / A[c, c]
            for j in range(c, m):
                A[i, j] -= fct * A[c, j]
            r[i] -= fct * r[c]
    for c in range(m - 1, -1, -1):
        s = r[c]
        for j in range(c + 1, m):
            s -= A[c, j] * r[j]
        r[c] = s / A[c, c]
    return r


@njit(cache=True, nogil=True)
def _newton_retract(x, n, cons, cjac, m, stack):
    # Gauss-Newton on c(x) = 0, steps in the row space of the constraint Jacobian
    c = np.empty(m)
    J = np.empty(m * n)
    G = np.empty((m, m))
    for _ in range(20):
        if not eval_block(cons, 0, m, x, c, stack):
            return False
        if np.max(np.abs(c)) <= 1e-13:
            return True
        if not eval_block(cjac, 0, m * n, x, J, stack):
            return False
        for i in range(m):
            for j in range(m):
                s = 0.0
                for l in range(n):
                    s += J[i * n + l] * J[j * n + l]
                G[i, j] = s
        lam = solve_small(G, c)
        for l in range(n):
            s = 0.0
            for i in range(m):
                s += J[i * n + l] * lam[i]
            x[l] -= s
        if not math.isfinite(x[0]):
            return False
    if not eval_block(cons, 0, m, x, c, stack):
        return False
    return np.max(np.abs(c)) <= 1e-12


@njit(cache=True, nogil=True)
def retract_inplace(x, n, geo, stack):
    """Apply the space's retraction to ``x[:n]``; False on failure."""
    mode, periods, cons, cjac, m, dom, nd = geo
    if mode == RETRACT_NEWTON and m > 0:
        return _newton_retract(x, n, cons, cjac, m, stack)
    if mode == RETRACT_NORMALIZE:
        s = 0.0
        for i in range(n):
            s += x[i] * x[i]
        s = math.sqrt(s)
        if s == 0.0:
            return False
        for i in range(n):
            x[i] /= s
        return True
    if mode == RETRACT_ORTHONORMALIZE:
        return _orthonormalize(x, n)
    return True


@njit(cache=True, nogil=True)
def in_domain(x, geo, stack):
    mode, periods, cons, cjac, m, dom, nd = geo
    if nd == 0:
        return True
    code, args, consts, starts = dom
    for i in range(nd):
        v = eval_expr(code, args, consts, starts[i], starts[i + 1], x, stack)
        if not (v > 0.0):
            return False
    return True


# --------------------------------------------------------------------------
# Dormand-Prince 5(4) tableau

_C = np.array([0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0])
_A = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ]
)
_B = np.array([35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0])
_E = np.array(
    [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ]
)
_RK4_A = np.array([0.0, 0.5, 0.5, 1.0])
_RK4_B = np.array([1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0])


@njit(cache=True, nogil=True)
def _rhs(fam, jac, f, n, with_jac, y, out, jbuf, stack):
    if not eval_block(fam, f * n, n, y, out, stack):
        return False
    if not with_jac:
        return True
    if not eval_block(jac, f * n * n, n * n, y, jbuf, stack):
        return False
    # d/dt M = DX(x) M, M stored row-major after the state
    for i in range(n):
        for j in range(n):
            s = 0.0
            for l in range(n):
                s += jbuf[i * n + l] * y[n + l * n + j]
            out[n + i * n + j] = s
    return True


@njit(cache=True, nogil=True)
def _accept(y, n, geo, escape_norm, stack):
    """Post-process an accepted state; returns a status code."""
    wrap_periodic(y, geo[1])
    if not retract_inplace(y, n, geo, stack):
        return STATUS_RETRACT
    s = 0.0
    for i in range(n):
        s += y[i] * y[i]
    if math.sqrt(s) > escape_norm:
        return STATUS_ESCAPE
    if not in_domain(y, geo, stack):
        return STATUS_DOMAIN
    return STATUS_OK


@njit(cache=True, nogil=True)
def integrate(fam, jac, f, n, y, t_final, with_jac, method, rtol, atol, max_step, escape_norm, geo, stack):
    """Integrate field ``f`` for signed time ``t_final`` in place.

    ``y`` holds the state, followed by the row-major variational matrix when
    ``with_jac`` is set.  Returns ``(status, time_reached, n_accepted)``.
    """
    size = y.shape[0]
    if t_final == 0.0:
        return STATUS_OK, 0.0, 0
    direction = 1.0 if t_final > 0.0 else -1.0
    total = abs(t_final)
    jbuf = np.empty(n * n)
    if method == METHOD_RK4:
        return _integrate_rk4(fam, jac, f, n, y, total, direction, with_jac, max_step, escape_norm, geo, stack, jbuf)

    K = np.empty((7, size))
    ytmp = np.empty(size)
    y5 = np.empty(size)
    t = 0.0
    h = min(max_step, total)
    naccept = 0
    last_reason = STATUS_UNDERFLOW
    while total - t > 1e-15 * max(1.0, total):
        remaining = total - t
        if h > remaining:
            h = remaining
        if h < MIN_STEP and h < remaining:
            return last_reason, direction * t, naccept
        hs = direction * h
        ok = True
        for s in range(7):
            for i in range(size):
                acc = y[i]
                for r in range(s):
                    acc += hs * _A[s, r] * K[r, i]
                ytmp[i] = acc
            if not _rhs(fam, jac, f, n, with_jac, ytmp, K[s], jbuf, stack):
                ok = False
                break
        if not ok:
            last_reason = STATUS_NONFINITE
            h *= 0.25
            continue
        err = 0.0
        for i in range(size):
            inc = 0.0
            e = 0.0
            for s in range(7):
                inc += _B[s] * K[s, i]
                e += _E[s] * K[s, i]
            y5[i] = y[i] + hs * inc
            scale = atol + rtol * max(abs(y[i]), abs(y5[i]))
            q = hs * e / scale
            err += q * q
        err = math.sqrt(err / size)
        if not math.isfinite(err):
            last_reason = STATUS_NONFINITE
            h *= 0.25
            continue
        if err <= 1.0:
            status = _accept(y5, n, geo, escape_norm, stack)
            if status == STATUS_DOMAIN or status == STATUS_RETRACT:
                last_reason = status
                h *= 0.5
                continue
            for i in range(size):
                y[i] = y5[i]
            t += h
            naccept += 1
            if status == STATUS_ESCAPE:
                return STATUS_ESCAPE, direction * t, naccept
            last_reason = STATUS_UNDERFLOW
            if err == 0.0:
                factor = 5.0
            else:
                factor = min(5.0, max(0.2, 0.9 * err ** -0.2))
            h = min(h * factor, max_step)
        else:
            last_reason = STATUS_UNDERFLOW
            h *= max(0.2, 0.9 * err ** -0.2)
    return STATUS_OK, t_final, naccept


@njit(cache=True, nogil=True)
def _integrate_rk4(fam, jac, f, n, y, total, direction, with_jac, max_step, escape_norm, geo, stack, jbuf):
    size = y.shape[0]
    nsteps = int(math.ceil(total / max_step - 1e-12))
    if nsteps < 1:
        nsteps = 1
    hs = direction * total / nsteps
    K = np.empty((4, size))
    ytmp = np.empty(size)
    for step in range(nsteps):
        for s in range(4):
            for i in range(size):
                ytmp[i] = y[i] + (hs * _RK4_A[s] * K[s - 1, i] if s > 0 else 0.0)
            if not _rhs(fam, jac, f, n, with_jac, ytmp, K[s], jbuf, stack):
                return STATUS_NONFINITE, direction * step * abs(hs), step
        for i in range(size):
            inc = 0.0
            for s in range(4):
                inc += _RK4_B[s] * K[s, i]
            ytmp[i] = y[i] + hs * inc
        status = _accept(ytmp, n, geo, escape_norm, stack)
        if status == STATUS_DOMAIN or status == STATUS_RETRACT:
            return status, direction * step * abs(hs), step
        for i in range(size):
            y[i] = ytmp[i]
        if status == STATUS_ESCAPE:
            return STATUS_ESCAPE, direction * (step + 1) * abs(hs), step + 1
    return STATUS_OK, direction * total, nsteps


@njit(cache=True, nogil=True)
def flow_word_batch(fam, jac, n, zero_mask, letters_f, letters_t, lengths, x0s,
                    method, rtol, atol, max_step, escape_norm, geo, stack_size):
    """Apply many flow words, rightmost letter first.

    Returns the end points plus per-word ``(status, failing_letter,
    time_reached)``.  ``zero_mask[f]`` marks identically-zero fields, whose
    letters are skipped.
    """
    nw = letters_f.shape[0]
    out = np.empty((nw, n))
    status = np.zeros(nw, dtype=np.int64)
    failing = np.full(nw, -1, dtype=np.int64)
    reached = np.zeros(nw)
    stack = np.empty(stack_size)
    y = np.empty(n)
    for w in range(nw):
        for i in range(n):
            y[i] = x0s[w, i]
        for pos in range(lengths[w] - 1, -1, -1):
            fi = letters_f[w, pos]
            if zero_mask[fi]:
                continue
            st, tr, _ = integrate(fam, jac, fi, n, y, letters_t[w, pos], False, method,
                                  rtol, atol, max_step, escape_norm, geo, stack)
            if st != STATUS_OK:
                status[w] = st
                failing[w] = pos
                reached[w] = tr
                break
        for i in range(n):
            out[w, i] = y[i]
    return out, status, failing, reached

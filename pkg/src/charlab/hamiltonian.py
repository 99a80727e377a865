"""Lagrangian and Hamiltonian descriptions and the bridge between them.

Hamiltonians use the variables t, q1..qn, p1..pn; Lagrangians t, q1..qn,
qd1..qdn.  Flows carry the accumulated action s with ds/dt = p.dq/dt - H,
integrated by the trapezoid rule on the flow grid.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .characteristics import _thread_count
from .errors import (
    DimensionMismatch,
    NoConvergence,
    SeparabilityNotDeclared,
    SingularHessian,
    ValidationError,
)
from .expr import Expression, Kernel
from .forms import PhaseLoop, loop_integral
from .integrators import fused_rk4, rk4_step, step_count

CONDITION_LIMIT = 1e12
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50


def _names(prefix, n):
    return [f"{prefix}{i + 1}" for i in range(n)]


def _check_alphabet(e: Expression, names, what):
    stray = [v for v in e.free_vars if v not in names]
    if stray:
        raise ValidationError(f"variable {stray[0]!r} is not allowed in {what}", key=stray[0])


@dataclass(frozen=True)
class PhasePoint:
    t: float
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, float))
        p = np.atleast_1d(np.asarray(self.p, float))
        if q.shape != p.shape:
            raise DimensionMismatch("dim(q) != dim(p)")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class VelocityPoint:
    t: float
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, float))
        qd = np.atleast_1d(np.asarray(self.qd, float))
        if q.shape != qd.shape:
            raise DimensionMismatch("dim(q) != dim(qd)")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)


@dataclass(frozen=True)
class HamiltonianProblem:
    """H(t, q, p); ``separable`` declares H = T(p) + V(q), which verlet requires."""

    n: int
    H: Expression
    separable: bool = False
    kernel: Kernel = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        order = ["t", *_names("q", self.n), *_names("p", self.n)]
        _check_alphabet(self.H, order, "a Hamiltonian")
        object.__setattr__(self, "kernel", self.H.kernel(order))

    @property
    def autonomous(self) -> bool:
        return "t" not in self.H.free_vars


@dataclass(frozen=True)
class LagrangianProblem:
    n: int
    L: Expression
    kernel: Kernel = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        order = ["t", *_names("q", self.n), *_names("qd", self.n)]
        _check_alphabet(self.L, order, "a Lagrangian")
        object.__setattr__(self, "kernel", self.L.kernel(order))


@dataclass
class Trajectory:
    """Flow samples on a uniform grid; ``qd`` is filled by Lagrangian flows."""

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    s: np.ndarray
    energy: np.ndarray
    dt: float
    method: str
    qd: np.ndarray | None = None

    def __len__(self):
        return self.t.size

    @property
    def final(self) -> PhasePoint:
        return PhasePoint(self.t[-1], self.q[-1], self.p[-1])

    def closure_defects(self) -> np.ndarray:
        """Per-step defect of ds = -H dt + p.dq (0 for the first sample)."""
        if len(self) < 2:
            return np.zeros(len(self))
        ds = np.diff(self.s)
        form = -0.5 * (self.energy[1:] + self.energy[:-1]) * np.diff(self.t)
        form += np.sum(0.5 * (self.p[1:] + self.p[:-1]) * np.diff(self.q, axis=0), axis=1)
        return np.concatenate(([0.0], np.abs(ds - form) / np.diff(self.t)))


# --- Legendre transform -----------------------------------------------------


def _lagrange_args(t, q, qd):
    return [float(t), *map(float, q), *map(float, qd)]


def legendre_to_hamiltonian(lp: LagrangianProblem, v: VelocityPoint):
    """p = dL/dqd and the Hamiltonian value p.qd - L at ``v``."""
    n = lp.n
    args = _lagrange_args(v.t, v.q, v.qd)
    lval, g = lp.kernel.value_and_partials(args, range(1 + n, 1 + 2 * n))
    p = np.array(g)
    return p, float(np.dot(p, v.qd) - lval)


def _condition(m: np.ndarray) -> float:
    if m.shape == (1, 1):
        return 1.0 if m[0, 0] != 0.0 and math.isfinite(m[0, 0]) else math.inf
    try:
        return float(np.linalg.cond(m))
    except np.linalg.LinAlgError:
        return math.inf


def _solve(m, rhs):
    cond = _condition(m)
    if not cond <= CONDITION_LIMIT:
        raise SingularHessian(cond)
    if m.shape == (1, 1):
        return np.array([rhs[0] / m[0, 0]])
    return np.linalg.solve(m, rhs)


def legendre_invert(lp: LagrangianProblem, t: float, q, p, start=None) -> np.ndarray:
    """Velocity qd solving dL/dqd(t, q, qd) = p by Newton iteration from ``start`` (default 0)."""
    n = lp.n
    q = np.atleast_1d(np.asarray(q, float))
    p = np.atleast_1d(np.asarray(p, float))
    qd = np.zeros(n) if start is None else np.atleast_1d(np.asarray(start, float)).copy()
    vel = list(range(1 + n, 1 + 2 * n))
    for _ in range(NEWTON_MAX_ITER):
        _, g, m = lp.kernel.derivatives(_lagrange_args(t, q, qd), vel, vel)
        resid = np.array(g) - p
        if np.max(np.abs(resid)) <= NEWTON_TOL:
            return qd
        qd = qd - _solve(m, resid)
    _, g, _ = lp.kernel.derivatives(_lagrange_args(t, q, qd), vel, vel)
    if np.max(np.abs(np.array(g) - p)) <= NEWTON_TOL:
        return qd
    raise NoConvergence(f"Legendre inversion did not converge in {NEWTON_MAX_ITER} iterations")


@dataclass(frozen=True)
class Eq11Residuals:
    """Max residuals of qd = dH/dp, dL/dq = -dH/dq and dL/dt = -dH/dt.

    All three identities involve derivatives only, so they cannot detect an
    additive constant between H and the Legendre transform of L.
    """

    velocity: float
    position: float
    time: float
    blind_to_constants: bool = True


def verify_eq11(lp: LagrangianProblem, hp: HamiltonianProblem, samples: Sequence[VelocityPoint]) -> Eq11Residuals:
    if lp.n != hp.n:
        raise DimensionMismatch("Lagrangian and Hamiltonian dimensions differ")
    n = lp.n
    all_l = range(0, 1 + 2 * n)
    all_h = range(0, 1 + 2 * n)
    ra = rb = rc = 0.0
    for v in samples:
        _, gl = lp.kernel.value_and_partials(_lagrange_args(v.t, v.q, v.qd), all_l)
        p = gl[1 + n :]
        _, gh = hp.kernel.value_and_partials([v.t, *map(float, v.q), *p], all_h)
        ra = max(ra, max(abs(a - b) for a, b in zip(v.qd, gh[1 + n :])))
        rb = max(rb, max(abs(a + b) for a, b in zip(gl[1 : 1 + n], gh[1 : 1 + n])))
        rc = max(rc, abs(gl[0] + gh[0]))
    return Eq11Residuals(float(ra), float(rb), float(rc))


# --- flows --------------------------------------------------------------------


def _hamilton_outputs(n):
    # jet lanes are (q.., p..): q' = dH/dp, p' = -dH/dq
    return tuple(f"g[{1 + n + i}]" for i in range(n)) + tuple(f"-g[{1 + i}]" for i in range(n))


def _hamilton_rhs(hp):
    n = hp.n
    jet = hp.kernel.jet(range(1, 1 + 2 * n))

    def rhs(t, y):
        g = jet(t, *y)
        return [*g[1 + n :], *[-v for v in g[1 : 1 + n]]]

    def action_rate(t, y):
        # (H, p.dH/dp - H)
        g = jet(t, *y)
        h = g[0]
        return h, sum(a * b for a, b in zip(y[n:], g[1 + n :])) - h

    return rhs, action_rate


def hamiltonian_flow(
    hp: HamiltonianProblem,
    start: PhasePoint,
    t_end: float,
    dt: float,
    method: str = "rk4",
) -> Trajectory:
    """Integrate dq/dt = dH/dp, dp/dt = -dH/dq from ``start`` to ``t_end``."""
    if start.q.size != hp.n:
        raise DimensionMismatch(f"start point of dimension {start.q.size} for n = {hp.n}")
    if method == "verlet" and not hp.separable:
        raise SeparabilityNotDeclared("verlet requires a Hamiltonian declared separable")
    if method not in ("rk4", "verlet"):
        raise ValueError(f"unknown method {method!r}")
    nsteps, h = step_count(t_end - start.t, dt)
    n = hp.n
    t0 = start.t
    rhs, action_rate = _hamilton_rhs(hp)
    ys = np.empty((nsteps + 1, 2 * n))
    energy = np.empty(nsteps + 1)
    rate = np.empty(nsteps + 1)
    y = [*start.q.tolist(), *start.p.tolist()]
    ys[0] = y
    energy[0], rate[0] = action_rate(t0, y)
    if method == "verlet":
        jet = hp.kernel.jet(range(1, 1 + 2 * n))
        half = 0.5 * h
        for k in range(nsteps):
            t = t0 + k * h
            q, p = y[:n], y[n:]
            g = jet(t, *q, *p)
            p = [a - half * b for a, b in zip(p, g[1 : 1 + n])]
            g = jet(t + half, *q, *p)
            q = [a + h * b for a, b in zip(q, g[1 + n :])]
            g = jet(t + h, *q, *p)
            p = [a - half * b for a, b in zip(p, g[1 : 1 + n])]
            y = q + p
            ys[k + 1] = y
            energy[k + 1], rate[k + 1] = action_rate(t + h, y)
    else:
        for k in range(nsteps):
            y = rk4_step(rhs, t0 + k * h, y, h)
            ys[k + 1] = y
            energy[k + 1], rate[k + 1] = action_rate(t0 + (k + 1) * h, y)
    s = np.concatenate(([0.0], np.cumsum(0.5 * h * (rate[1:] + rate[:-1]))))
    return Trajectory(
        t=t0 + h * np.arange(nsteps + 1),
        q=ys[:, :n].copy(),
        p=ys[:, n:].copy(),
        s=s,
        energy=energy,
        dt=h,
        method=method,
    )


def lagrange_flow(lp: LagrangianProblem, start: VelocityPoint, t_end: float, dt: float) -> Trajectory:
    """RK4 on (q, qd) with qdd from  M qdd = L_q - L_{qd q} qd - L_{qd t},  M = L_{qd qd}.

    The returned trajectory carries p = dL/dqd and the Legendre energy
    p.qd - L in ``energy``; the action accumulates L.
    """
    n = lp.n
    if start.q.size != n:
        raise DimensionMismatch(f"start point of dimension {start.q.size} for n = {n}")
    nsteps, h = step_count(t_end - start.t, dt)
    t0 = start.t
    cols = list(range(0, 1 + 2 * n))  # t, q..., qd...
    vel = list(range(1 + n, 1 + 2 * n))
    jet = lp.kernel.jet(cols, vel)
    m_cols = 1 + 2 * n

    def split(t, y):
        out = jet(t, *y)
        grad = out[1 : 1 + m_cols]
        rows = [out[1 + m_cols + r * m_cols : 1 + m_cols + (r + 1) * m_cols] for r in range(n)]
        return out[0], grad, rows

    def rhs(t, y):
        _, grad, rows = split(t, y)
        qd = y[n:]
        m = np.array([row[1 + n :] for row in rows])
        force = [
            grad[1 + i] - sum(rows[i][1 + j] * qd[j] for j in range(n)) - rows[i][0]
            for i in range(n)
        ]
        return [*qd, *_solve(m, np.array(force)).tolist()]

    def rhs_1(t, y):
        # one degree of freedom: out = (L, L_t, L_q, L_qd, L_qd t, L_qd q, L_qd qd)
        out = jet(t, y[0], y[1])
        mm = out[6]
        if mm == 0.0 or not math.isfinite(mm):
            raise SingularHessian(math.inf)
        return [y[1], (out[2] - out[5] * y[1] - out[4]) / mm]

    ys = np.empty((nsteps + 1, 2 * n))
    ps = np.empty((nsteps + 1, n))
    lag = np.empty(nsteps + 1)
    y = [*start.q.tolist(), *start.qd.tolist()]

    def record(k, t, y):
        lval, grad, _ = split(t, y)
        ys[k] = y
        ps[k] = grad[1 + n :]
        lag[k] = lval

    record(0, t0, y)
    f = rhs_1 if n == 1 else rhs
    for k in range(nsteps):
        y = rk4_step(f, t0 + k * h, y, h)
        record(k + 1, t0 + (k + 1) * h, y)
    qd = ys[:, n:].copy()
    s = np.concatenate(([0.0], np.cumsum(0.5 * h * (lag[1:] + lag[:-1]))))
    return Trajectory(
        t=t0 + h * np.arange(nsteps + 1),
        q=ys[:, :n].copy(),
        p=ps,
        s=s,
        energy=np.sum(ps * qd, axis=1) - lag,
        dt=h,
        method="rk4",
        qd=qd,
    )


def equivalence_check(
    lp: LagrangianProblem,
    hp: HamiltonianProblem,
    start: VelocityPoint,
    t_end: float,
    dt: float,
    lagrange: Trajectory | None = None,
) -> float:
    """Sup over the shared grid of |q_L - q_H| + |p_L - p_H| (1-norms).

    ``lagrange`` may pass an already computed ``lagrange_flow`` for the same
    arguments.
    """
    lag = lagrange if lagrange is not None else lagrange_flow(lp, start, t_end, dt)
    p0, _ = legendre_to_hamiltonian(lp, start)
    ham = hamiltonian_flow(hp, PhasePoint(start.t, start.q, p0), t_end, dt, "rk4")
    dev = np.sum(np.abs(lag.q - ham.q), axis=1) + np.sum(np.abs(lag.p - ham.p), axis=1)
    return float(np.max(dev))


# --- invariants ---------------------------------------------------------------


def _flow_endpoint(hp, t0, y, t_end, dt, method):
    # same stepping as hamiltonian_flow, without recording energy or action
    nsteps, h = step_count(t_end - t0, dt)
    n = hp.n
    if method == "verlet":
        if not hp.separable:
            raise SeparabilityNotDeclared("verlet requires a Hamiltonian declared separable")
        jet = hp.kernel.jet(range(1, 1 + 2 * n))
        half = 0.5 * h
        for k in range(nsteps):
            t = t0 + k * h
            q, p = y[:n], y[n:]
            g = jet(t, *q, *p)
            p = [a - half * b for a, b in zip(p, g[1 : 1 + n])]
            g = jet(t + half, *q, *p)
            q = [a + h * b for a, b in zip(q, g[1 + n :])]
            g = jet(t + h, *q, *p)
            p = [a - half * b for a, b in zip(p, g[1 : 1 + n])]
            y = q + p
    else:
        jet = hp.kernel.jet(range(1, 1 + 2 * n))
        advance = fused_rk4(_hamilton_outputs(n))
        y = advance(jet, t0, y, h, nsteps)
    return t0 + nsteps * h, y


def transport_loop(hp: HamiltonianProblem, loop: PhaseLoop, t_end: float, dt: float, method="rk4", threads=None) -> PhaseLoop:
    """Move every loop point with the flow; one independent flow per point."""
    t, q, p = loop.points()

    n = q.shape[1]

    def one(k):
        return _flow_endpoint(hp, float(t[k]), [*q[k].tolist(), *p[k].tolist()], t_end, dt, method)

    workers = min(_thread_count(threads), t.size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            finals = list(pool.map(one, range(t.size)))
    else:
        finals = [one(k) for k in range(t.size)]
    return PhaseLoop(
        np.array([f[0] for f in finals]),
        np.array([f[1][:n] for f in finals]),
        np.array([f[1][n:] for f in finals]),
    )


@dataclass(frozen=True)
class PoincareResult:
    initial: float
    final: float

    @property
    def drift(self) -> float:
        return abs(self.final - self.initial)


def poincare_invariance(hp: HamiltonianProblem, loop0: PhaseLoop, t_end: float, dt: float, method="rk4", threads=None) -> PoincareResult:
    """Loop integral of p dq - H dt before and after transport to ``t_end``."""
    t, q, _ = loop0.points()
    if q.shape[1] != hp.n:
        raise DimensionMismatch("loop dimension differs from the Hamiltonian's")
    i0 = loop_integral(loop0, hp.H)
    if t.size < 2:
        return PoincareResult(i0, i0)
    moved = transport_loop(hp, loop0, t_end, dt, method, threads)
    return PoincareResult(i0, loop_integral(moved, hp.H))


@dataclass(frozen=True)
class CanonicalMap:
    """(q, p) -> (Q, P), optionally with a generating function W(q, p)."""

    n: int
    Q: tuple
    P: tuple
    W: Expression | None = None

    def __post_init__(self):
        if len(self.Q) != self.n or len(self.P) != self.n:
            raise DimensionMismatch("canonical map needs n components for Q and for P")
        order = [*_names("q", self.n), *_names("p", self.n)]
        for e in (*self.Q, *self.P, *((self.W,) if self.W is not None else ())):
            _check_alphabet(e, order, "a canonical map")

    @property
    def order(self):
        return [*_names("q", self.n), *_names("p", self.n)]

    def apply(self, q, p):
        args = [*map(float, q), *map(float, p)]
        kern = [e.kernel(self.order) for e in (*self.Q, *self.P)]
        out = [k.value(args) for k in kern]
        return np.array(out[: self.n]), np.array(out[self.n :])

    def jacobian(self, q, p) -> np.ndarray:
        args = [*map(float, q), *map(float, p)]
        cols = range(2 * self.n)
        return np.array([e.kernel(self.order).partials(args, cols) for e in (*self.Q, *self.P)])


def symplectic_form(n: int) -> np.ndarray:
    z, i = np.zeros((n, n)), np.eye(n)
    return np.block([[z, i], [-i, z]])


@dataclass(frozen=True)
class CanonicalReport:
    symplectic: float
    form: float
    generating: float | None = None


def canonical_check(cmap: CanonicalMap, loops: Sequence[PhaseLoop], samples: Sequence) -> CanonicalReport:
    """Symplectic residual max|J^T Omega J - Omega| over ``samples`` ((q, p) pairs)
    and form residual max|loop(p dq) - loop(P dQ)| over ``loops``.

    With a generating function W the pointwise residual of
    p dq - P dQ - dW (all 2n components) is reported too.
    """
    n = cmap.n
    omega = symplectic_form(n)
    sym = 0.0
    gen = None if cmap.W is None else 0.0
    wk = None if cmap.W is None else cmap.W.kernel(cmap.order)
    for q, p in samples:
        jac = cmap.jacobian(q, p)
        sym = max(sym, float(np.max(np.abs(jac.T @ omega @ jac - omega))))
        if wk is not None:
            _, big_p = cmap.apply(q, p)
            dw = np.array(wk.partials([*map(float, q), *map(float, p)], range(2 * n)))
            lhs = np.concatenate((np.atleast_1d(np.asarray(p, float)), np.zeros(n)))
            gen = max(gen, float(np.max(np.abs(lhs - big_p @ jac[:n] - dw))))
    form = 0.0
    for loop in loops:
        t, q, p = loop.points()
        mapped = [cmap.apply(q[k], p[k]) for k in range(t.size)]
        image = PhaseLoop(t, np.array([m[0] for m in mapped]), np.array([m[1] for m in mapped]))
        form = max(form, abs(loop_integral(loop) - loop_integral(image)))
    return CanonicalReport(sym, form, gen)

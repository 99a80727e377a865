"""Characteristic strips of first-order PDEs.

Two problem kinds are supported:

``general``   F(x, u, p) = 0, integrated along the Charpit system
              dx/ds = F_p,  dp/ds = -(F_x + p F_u),  du/ds = p . F_p
``evolution`` u_t + E(t, x, p) = 0, integrated in time along
              dx/dt = E_p,  dp/dt = -E_x,  du/dt = p . E_p - E

Strips are fixed-step RK4 trajectories of the state (x, u, p).  Families of
strips launched from initial data share one time grid, which is what the
crossing and jump diagnostics work on.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import (
    CharlabError,
    DimensionMismatch,
    EmptySeeds,
    InitialJetOffManifold,
    OutOfRange,
    StepFailure,
    ValidationError,
)
from .expr import Expression, Kernel
from .forms import CurveSample, closure_defects
from .integrators import rk4_step, step_count

MANIFOLD_TOL = 1e-10
STRIP_TOL = 1e-6


@dataclass(frozen=True)
class JetPoint:
    x: np.ndarray
    u: float
    p: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, float))
        p = np.atleast_1d(np.asarray(self.p, float))
        if x.shape != p.shape:
            raise DimensionMismatch(f"jet has dim(x)={x.size} but dim(p)={p.size}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "u", float(self.u))

    @property
    def n(self) -> int:
        return self.x.size


def alphabet(kind: str, n: int) -> list:
    xs = [f"x{i + 1}" for i in range(n)]
    ps = [f"p{i + 1}" for i in range(n)]
    if kind == "general":
        return xs + ["u"] + ps
    if kind == "evolution":
        return ["t"] + xs + ps
    raise ValueError(f"unknown problem kind {kind!r}")


@dataclass(frozen=True)
class PdeProblem:
    """``expr`` is F for ``kind="general"`` and E for ``kind="evolution"``."""

    kind: str
    n: int
    expr: Expression
    kernel: Kernel = field(init=False, repr=False, compare=False)
    jet: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = alphabet(self.kind, self.n)
        stray = [v for v in self.expr.free_vars if v not in names]
        if stray:
            raise ValidationError(
                f"variable {stray[0]!r} is not allowed in a {self.kind} problem of dimension {self.n}",
                key=stray[0],
            )
        object.__setattr__(self, "kernel", self.expr.kernel(names))
        # value and partials in every variable except t
        first = 0 if self.kind == "general" else 1
        object.__setattr__(self, "jet", self.kernel.jet(range(first, len(names))))

    def residual(self, jet: JetPoint) -> float:
        """|F(x, u, p)| for general problems."""
        if self.kind != "general":
            raise ValueError("residual is defined for general problems only")
        return abs(self.kernel.value(np.concatenate((jet.x, [jet.u], jet.p))))


def charpit_rhs(prob: PdeProblem, j: JetPoint):
    """Charpit right-hand side at ``j``: returns (dx, du, dp)."""
    n = prob.n
    d = _charpit(prob, [*j.x.tolist(), j.u, *j.p.tolist()])
    return np.array(d[:n]), d[n], np.array(d[n + 1 :])


@lru_cache(maxsize=None)
def _rhs_source(kind, n):
    # unrolled right-hand sides; the arithmetic matches a plain sum() loop
    if kind == "general":
        # g = (F, F_x.., F_u, F_p..) at y = (x.., u, p..)
        fp = [f"g[{n + 2 + i}]" for i in range(n)]
        du = " + ".join(f"y[{n + 1 + i}] * {fp[i]}" for i in range(n))
        dp = [f"-(g[{1 + i}] + y[{n + 1 + i}] * g[{n + 1}])" for i in range(n)]
        body = ["def rhs(jet, y):", "    g = jet(*y)", f"    return [{', '.join([*fp, du, *dp])}]"]
    else:
        # g = (E, E_x.., E_p..) at (t, x.., p..); returns the derivative and E
        ep = [f"g[{n + 1 + i}]" for i in range(n)]
        du = " + ".join(f"y[{n + 1 + i}] * {ep[i]}" for i in range(n)) + " - g[0]"
        dp = [f"-g[{1 + i}]" for i in range(n)]
        args = ", ".join([*(f"y[{i}]" for i in range(n)), *(f"y[{n + 1 + i}]" for i in range(n))])
        body = ["def rhs(jet, t, y):", f"    g = jet(t, {args})", f"    return [{', '.join([*ep, du, *dp])}], g[0]"]
    ns = {}
    exec("\n".join(body), ns)
    return ns["rhs"]


def _charpit(prob, y):
    # d/ds of the state [x, u, p]
    return _rhs_source("general", prob.n)(prob.jet, y)


def evolution_rhs(prob: PdeProblem, t: float, x, p):
    """Characteristic right-hand side of u_t + E = 0: returns (dx, dp, du)."""
    x = np.atleast_1d(np.asarray(x, float)).tolist()
    p = np.atleast_1d(np.asarray(p, float)).tolist()
    n = prob.n
    d, _ = _evolution(prob, t, [*x, 0.0, *p])
    return np.array(d[:n]), np.array(d[n + 1 :]), d[n]


def _evolution(prob, t, y):
    # d/dt of the state [x, u, p], plus E itself
    return _rhs_source("evolution", prob.n)(prob.jet, t, y)


@dataclass
class CharacteristicStrip:
    """Sampled strip; ``param`` is s (general) or t (evolution).

    ``residuals`` holds |F| per sample for general problems and is None for
    evolution problems.  ``e_values`` holds E per sample (evolution only).
    """

    problem: PdeProblem
    param: np.ndarray
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    dt: float
    residuals: np.ndarray | None = None
    e_values: np.ndarray | None = None
    truncated: bool = False
    failure: str | None = None

    def __len__(self):
        return self.param.size

    @property
    def final(self) -> JetPoint:
        return JetPoint(self.x[-1], self.u[-1], self.p[-1])

    def as_curve(self) -> CurveSample:
        """The strip as a curve carrying theta.

        Evolution strips live in (t, x) with covector (-E, p), so that the
        defect measures du = -E dt + p.dx.
        """
        if self.problem.kind == "general":
            return CurveSample(self.param, self.x, self.u, self.p)
        x = np.column_stack((self.param, self.x))
        p = np.column_stack((-self.e_values, self.p))
        return CurveSample(self.param, x, self.u, p)

    def closure_defects(self) -> np.ndarray:
        """Per-sample closure defect (0 for the first sample)."""
        if len(self) < 2:
            return np.zeros(len(self))
        return np.concatenate(([0.0], closure_defects(self.as_curve())))


def integrate_strip(
    prob: PdeProblem,
    j0: JetPoint,
    length: float,
    dt: float,
    t0: float = 0.0,
    method: str = "rk4",
    on_failure: str = "truncate",
) -> CharacteristicStrip:
    """RK4 strip from ``j0`` over parameter ``length`` with step ``dt``.

    If ``length`` is not a multiple of ``dt`` the step is shrunk to the
    nearest one that is.  When |F| exceeds 1e-6 or evaluation fails, the strip
    is cut at the last good sample and flagged; with ``on_failure="raise"`` a
    :class:`StepFailure` carrying that strip is raised instead.
    """
    if method != "rk4":
        raise ValueError(f"unsupported method {method!r}")
    if j0.n != prob.n:
        raise DimensionMismatch(f"jet of dimension {j0.n} for a problem of dimension {prob.n}")
    nsteps, h = step_count(length, dt)
    n = prob.n
    general = prob.kind == "general"
    y = [*j0.x.tolist(), j0.u, *j0.p.tolist()]
    if general:
        r0 = prob.residual(j0)
        if r0 > MANIFOLD_TOL:
            raise InitialJetOffManifold(r0)
        fast = _rhs_source("general", n)
        rhs = lambda s, state: fast(prob.jet, state)  # noqa: E731
    else:
        fast = _rhs_source("evolution", n)
        rhs = lambda t, state: fast(prob.jet, t, state)[0]  # noqa: E731

    ys = np.empty((nsteps + 1, 2 * n + 1))
    ys[0] = y
    extra = np.empty(nsteps + 1)  # |F| or E per sample
    failure = None
    try:
        extra[0] = r0 if general else _evolution(prob, t0, y)[1]
    except CharlabError as exc:
        failure = f"evaluation failed at start: {exc}"
        nsteps = 0
    last = 0
    value = prob.kernel.value
    for k in range(nsteps):
        try:
            y_new = rk4_step(rhs, t0 + k * h, y, h)
            if general:
                val = abs(value(y_new))
            else:
                val = _evolution(prob, t0 + (k + 1) * h, y_new)[1]
        except CharlabError as exc:
            failure = f"evaluation failed at step {k + 1}: {exc}"
            break
        if not all(math.isfinite(v) for v in y_new):
            failure = f"non-finite state at step {k + 1}"
            break
        if general and val > STRIP_TOL:
            failure = f"|F| = {val:.3e} exceeds {STRIP_TOL:g} at step {k + 1}"
            break
        ys[k + 1] = y_new
        extra[k + 1] = val
        y = y_new
        last = k + 1
    m = last + 1
    param = t0 + h * np.arange(m)
    strip = CharacteristicStrip(
        problem=prob,
        param=param,
        x=ys[:m, :n].copy(),
        u=ys[:m, n].copy(),
        p=ys[:m, n + 1 :].copy(),
        dt=h,
        residuals=extra[:m].copy() if general else None,
        e_values=None if general else extra[:m].copy(),
        truncated=failure is not None,
        failure=failure,
    )
    if failure is not None and on_failure == "raise":
        raise StepFailure(failure, strip)
    return strip


@dataclass(frozen=True)
class SeedGrid:
    """Tensor grid of initial points: per-axis lows, highs and counts."""

    lows: tuple
    highs: tuple
    counts: tuple

    def points(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, c) for lo, hi, c in zip(self.lows, self.highs, self.counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])


def seed_from_initial_data(prob: PdeProblem, u0: Expression, grid: SeedGrid) -> list:
    """Initial jets (x0, u0(x0), grad u0(x0)) on ``grid``."""
    names = [f"x{i + 1}" for i in range(prob.n)]
    if len(grid.counts) != prob.n:
        raise DimensionMismatch(f"seed grid has {len(grid.counts)} axes, problem has {prob.n}")
    kern = u0.kernel(names)
    jets = []
    for x0 in grid.points():
        jets.append(JetPoint(x0, kern.value(x0), kern.partials(x0, range(prob.n))))
    return jets


@dataclass
class StripFamily:
    problem: PdeProblem
    strips: list
    labels: list  # initial x of each strip, in seed order
    dt: float
    t0: float = 0.0

    def __len__(self):
        return len(self.strips)

    @property
    def failures(self) -> list:
        return [(i, s.failure) for i, s in enumerate(self.strips) if s.truncated]

    @property
    def common_steps(self) -> int:
        """Number of grid samples every strip has."""
        return min(len(s) for s in self.strips)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.common_steps)

    def positions(self, axis: int = 0) -> np.ndarray:
        """x[axis] of every strip on the common grid, shape (steps, strips)."""
        m = self.common_steps
        return np.column_stack([s.x[:m, axis] for s in self.strips])

    def momenta(self) -> np.ndarray:
        """p of every strip on the common grid, shape (steps, strips, n)."""
        m = self.common_steps
        return np.stack([s.p[:m] for s in self.strips], axis=1)


def _thread_count(threads):
    if threads is None:
        threads = int(os.environ.get("CHARLAB_THREADS", "0") or 0)
    return threads if threads > 0 else (os.cpu_count() or 1)


def integrate_family(
    prob: PdeProblem,
    seeds: Sequence[JetPoint],
    t_end: float,
    dt: float,
    t0: float = 0.0,
    threads: int | None = None,
) -> StripFamily:
    """One strip per seed on a shared grid; output order is seed order.

    ``t_end`` is the end time for evolution problems and the parameter length
    for general ones.  Strips that fail are kept truncated and flagged.
    """
    seeds = list(seeds)
    if not seeds:
        raise EmptySeeds("no seeds to integrate")
    if len({s.n for s in seeds}) != 1 or seeds[0].n != prob.n:
        raise DimensionMismatch("seeds must share the problem dimension")
    length = t_end - t0 if prob.kind == "evolution" else t_end

    def one(seed):
        return integrate_strip(prob, seed, length, dt, t0=t0 if prob.kind == "evolution" else 0.0)

    workers = min(_thread_count(threads), len(seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            strips = list(pool.map(one, seeds))
    else:
        strips = [one(s) for s in seeds]
    t_start = t0 if prob.kind == "evolution" else 0.0
    return StripFamily(prob, strips, [s.x.copy() for s in seeds], strips[0].dt, t_start)


@dataclass(frozen=True)
class Crossing:
    t: float
    x: float
    strips: tuple  # indices of the adjacent strips whose order flips first


def _orientation(positions):
    jac = np.diff(positions, axis=1)
    ref = np.sign(jac[0])
    ref[ref == 0] = 1.0
    return jac * ref


def detect_crossing(family: StripFamily, axis: int = 0) -> Crossing | None:
    """Earliest time at which adjacent strips meet or swap order along ``axis``.

    The discrete Jacobian is the forward difference of x across adjacent
    seeds.  The first grid index where it is non-positive (relative to its
    initial sign) is found by bisection; the crossing time is then refined
    by linear interpolation of that Jacobian inside the bracketing step.
    """
    if len(family) < 3:
        raise ValueError("crossing detection needs at least 3 strips")
    pos = family.positions(axis)
    jac = _orientation(pos)
    folded = np.any(jac <= 0.0, axis=1)
    if not folded.any():
        return None
    seen = np.maximum.accumulate(folded)
    lo, hi = -1, seen.size - 1  # invariant: not seen at lo, seen at hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if seen[mid]:
            hi = mid
        else:
            lo = mid
    k = hi
    times = family.times
    if k == 0:
        m = int(np.argmin(jac[0]))
        return Crossing(float(times[0]), float(0.5 * (pos[0, m] + pos[0, m + 1])), (m, m + 1))
    best = None
    for m in np.flatnonzero(jac[k] <= 0.0):
        a, b = jac[k - 1, m], jac[k, m]
        frac = a / (a - b)
        t_star = times[k - 1] + frac * (times[k] - times[k - 1])
        if best is None or t_star < best[0]:
            best = (t_star, m, frac)
    t_star, m, frac = best
    xa = pos[k - 1, m] + frac * (pos[k, m] - pos[k - 1, m])
    xb = pos[k - 1, m + 1] + frac * (pos[k, m + 1] - pos[k - 1, m + 1])
    return Crossing(float(t_star), float(0.5 * (xa + xb)), (int(m), int(m + 1)))


@dataclass(frozen=True)
class JumpScan:
    max_gap: float
    location: float
    multivalued: bool
    branches: int


def _state_at(family: StripFamily, t: float, axis: int):
    times = family.times
    if not (times[0] - 1e-12 <= t <= times[-1] + 1e-12):
        raise OutOfRange(f"t = {t} outside the family range [{times[0]}, {times[-1]}]")
    pos = family.positions(axis)
    mom = family.momenta()
    k = int(np.clip(np.searchsorted(times, t), 1, times.size - 1)) if times.size > 1 else 0
    if times.size == 1:
        return pos[0], mom[0]
    w = (t - times[k - 1]) / (times[k] - times[k - 1])
    if abs(w) < 1e-9:
        return pos[k - 1], mom[k - 1]
    if abs(w - 1.0) < 1e-9:
        return pos[k], mom[k]
    return (1 - w) * pos[k - 1] + w * pos[k], (1 - w) * mom[k - 1] + w * mom[k]


def _branches(x, p):
    """Split seed order into pieces on which x is strictly monotone."""
    d = np.sign(np.diff(x))
    cuts = [0]
    for i in range(1, d.size):
        if d[i] != d[i - 1]:
            cuts.append(i)
    cuts.append(x.size - 1)
    return [(x[a : b + 1], p[a : b + 1]) for a, b in zip(cuts[:-1], cuts[1:])]


def branch_values(family: StripFamily, t: float, x_probe: float, axis: int = 0) -> np.ndarray:
    """p on every branch of the characteristic map that covers ``x_probe`` at time ``t``."""
    x, p = _state_at(family, t, axis)
    return _branch_values(x, p, x_probe)


def _branch_values(x, p, x_probe):
    out = []
    for bx, bp in _branches(x, p):
        if bx.size < 2:
            continue
        order = np.argsort(bx)
        sx, sp = bx[order], bp[order]
        if sx[0] <= x_probe <= sx[-1]:
            i = int(np.clip(np.searchsorted(sx, x_probe), 1, sx.size - 1))
            w = (x_probe - sx[i - 1]) / (sx[i] - sx[i - 1]) if sx[i] > sx[i - 1] else 0.0
            out.append((1 - w) * sp[i - 1] + w * sp[i])
    return np.array(out).reshape(len(out), -1)


def _spread(values):
    if len(values) < 2:
        return 0.0
    diffs = values[:, None, :] - values[None, :, :]
    return float(np.max(np.linalg.norm(diffs, axis=2)))


def jump_scan(family: StripFamily, t: float, axis: int = 0) -> JumpScan:
    """Largest |delta p| between neighbouring strips at time ``t``.

    While the characteristic map is monotone, neighbours are adjacent seeds
    and the gap is their |delta p|.  After a crossing the seed order is cut
    into monotone branches and the gap at a location is the spread of p over
    all branches covering it; the maximum over strip positions is reported.
    """
    x, p = _state_at(family, t, axis)
    d = np.diff(x)
    monotone = bool(np.all(d > 0) or np.all(d < 0))
    if monotone:
        gaps = np.linalg.norm(np.diff(p, axis=0), axis=1)
        m = int(np.argmax(gaps))
        return JumpScan(float(gaps[m]), float(0.5 * (x[m] + x[m + 1])), False, 1)
    best, where = 0.0, float(x[0])
    for xp in x:
        s = _spread(_branch_values(x, p, xp))
        if s > best:
            best, where = s, float(xp)
    return JumpScan(best, where, True, len(_branches(x, p)))

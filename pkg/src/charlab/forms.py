"""Numerical diagnostics for the 1-form theta = p_i dx^i.

* the commutator K_ij = dp_j/dx^i - dp_i/dx^j of a derivative field,
* the per-step defect of du = p_i dx^i along sampled curves,
* reconstruction of u from p along a curve (the interior differential),
* loop integrals of p dq - H dt over closed phase-space loops.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, LoopNotClosed, TooFewSamples
from .expr import Expression

LOOP_CLOSURE_TOL = 1e-12


@dataclass(frozen=True)
class CommutatorMatrix:
    k: np.ndarray

    @property
    def n(self) -> int:
        return self.k.shape[0]

    @property
    def norm(self) -> float:
        """Euclidean norm over the independent components K_ij, i < j."""
        iu = np.triu_indices(self.n, 1)
        return float(np.sqrt(np.sum(self.k[iu] ** 2)))


def antisymmetrize(d: np.ndarray) -> np.ndarray:
    """K from the derivative matrix d[i, j] = dp_j/dx^i.

    Only the upper triangle is computed; the lower one is its exact negative.
    """
    n = d.shape[0]
    k = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            k[i, j] = d[i, j] - d[j, i]
            k[j, i] = -k[i, j]
    return k


def commutator_of_field(
    p_field: Sequence[Expression],
    point,
    mode: str = "exact",
    h=None,
) -> CommutatorMatrix:
    """Commutator of ``p_field`` (expressions in x1..xn) at ``point``.

    ``mode="fd"`` uses central differences with step ``h`` (scalar or per
    coordinate); by default ``h_i = 1e-5 * max(1, |x_i|)``.
    """
    x = np.asarray(point, dtype=float)
    n = x.size
    if len(p_field) != n:
        raise DimensionMismatch(f"{len(p_field)} field components for a {n}-dimensional point")
    names = [f"x{i + 1}" for i in range(n)]
    kernels = [e.kernel(names) for e in p_field]
    d = np.zeros((n, n))
    if mode == "exact":
        for j, kern in enumerate(kernels):
            d[:, j] = kern.partials(x, range(n))
    elif mode == "fd":
        steps = 1e-5 * np.maximum(1.0, np.abs(x)) if h is None else np.broadcast_to(np.asarray(h, float), (n,))
        if np.any(steps <= 0):
            raise ValueError("finite-difference step must be positive")
        for i in range(n):
            xp, xm = x.copy(), x.copy()
            xp[i] += steps[i]
            xm[i] -= steps[i]
            for j, kern in enumerate(kernels):
                d[i, j] = (kern.value(xp) - kern.value(xm)) / (2.0 * steps[i])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return CommutatorMatrix(antisymmetrize(d))


@dataclass(frozen=True)
class CurveSample:
    """Ordered records (param, x, u, p) along a curve in jet space."""

    param: np.ndarray
    x: np.ndarray
    u: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        param = np.asarray(self.param, float)
        x = np.atleast_2d(np.asarray(self.x, float))
        p = np.atleast_2d(np.asarray(self.p, float))
        u = np.asarray(self.u, float)
        if x.shape[0] != param.size and x.shape[1] == param.size:
            x, p = x.T, p.T
        if not (x.shape == p.shape and x.shape[0] == param.size == u.size):
            raise DimensionMismatch("curve records have inconsistent dimensions")
        if param.size > 1 and np.any(np.diff(param) <= 0):
            raise ValueError("curve parameter must be strictly increasing")
        object.__setattr__(self, "param", param)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "p", p)

    def __len__(self):
        return self.param.size


def closure_defects(curve: CurveSample) -> np.ndarray:
    """|du - mid(p).dx| / dparam for every step (length len(curve) - 1)."""
    if len(curve) < 2:
        raise TooFewSamples("closure defect needs at least 2 samples")
    dx = np.diff(curve.x, axis=0)
    pm = 0.5 * (curve.p[1:] + curve.p[:-1])
    du = np.diff(curve.u)
    return np.abs(du - np.sum(pm * dx, axis=1)) / np.diff(curve.param)


def closure_residual(curve: CurveSample) -> float:
    return float(np.max(closure_defects(curve)))


def interior_differential(curve: CurveSample) -> np.ndarray:
    """u rebuilt from u(s_0) by trapezoid accumulation of p.dx."""
    if len(curve) < 2:
        raise TooFewSamples("interior differential needs at least 2 samples")
    dx = np.diff(curve.x, axis=0)
    pm = 0.5 * (curve.p[1:] + curve.p[:-1])
    return curve.u[0] + np.concatenate(([0.0], np.cumsum(np.sum(pm * dx, axis=1))))


@dataclass(frozen=True)
class PhaseLoop:
    """Closed loop of phase points (t, q, p).

    With ``repeated_endpoint=False`` the last point connects back to the first;
    otherwise the last record must repeat the first.
    """

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    repeated_endpoint: bool = False

    def __post_init__(self):
        q = np.asarray(self.q, float)
        p = np.asarray(self.p, float)
        if q.ndim == 1:
            q, p = q[:, None], p[:, None]
        t = np.broadcast_to(np.asarray(self.t, float), (q.shape[0],)).copy()
        if q.shape != p.shape:
            raise DimensionMismatch("loop q and p shapes differ")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    def __len__(self):
        return self.t.size

    def points(self):
        """(t, q, p) with the repeated endpoint removed."""
        if not self.repeated_endpoint:
            return self.t, self.q, self.p
        gap = max(
            abs(self.t[-1] - self.t[0]),
            float(np.max(np.abs(self.q[-1] - self.q[0]))),
            float(np.max(np.abs(self.p[-1] - self.p[0]))),
        )
        if gap > LOOP_CLOSURE_TOL:
            raise LoopNotClosed(f"loop endpoints differ by {gap:.3e}")
        return self.t[:-1], self.q[:-1], self.p[:-1]

    def reversed(self) -> "PhaseLoop":
        return PhaseLoop(self.t[::-1], self.q[::-1], self.p[::-1], self.repeated_endpoint)


def circle_loop(n_points: int, radius=1.0, center_q=0.0, center_p=0.0, t=0.0, dim=1, plane=0) -> PhaseLoop:
    """q = cq + r cos(theta), p = cp + r sin(theta), theta in [0, 2 pi), in the (q_k, p_k) plane."""
    theta = 2.0 * np.pi * np.arange(n_points) / n_points
    q = np.tile(np.broadcast_to(np.asarray(center_q, float), (dim,)), (n_points, 1))
    p = np.tile(np.broadcast_to(np.asarray(center_p, float), (dim,)), (n_points, 1))
    q[:, plane] += radius * np.cos(theta)
    p[:, plane] += radius * np.sin(theta)
    return PhaseLoop(np.full(n_points, float(t)), q, p)


def _index_derivative(f: np.ndarray) -> np.ndarray:
    # periodic fourth-order central difference with respect to the point index
    return (8.0 * (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) - (np.roll(f, -2, axis=0) - np.roll(f, 2, axis=0))) / 12.0


def loop_integral(loop: PhaseLoop, H: Expression | None = None, rule: str = "fourth_order") -> float:
    """Quadrature of the closed-loop integral of p.dq - H dt.

    ``rule="trapezoid"`` sums mid(p).dq over the polygon edges (second order);
    ``rule="fourth_order"`` (default) takes periodic fourth-order differences
    of q and t along the point index and sums p.q' - H t' (the periodic
    trapezoid rule in the loop label).  Loops with fewer than 5 points always
    use the trapezoid rule.
    """
    t, q, p = loop.points()
    m = t.size
    if m < 2:
        return 0.0
    if rule not in ("fourth_order", "trapezoid"):
        raise ValueError(f"unknown rule {rule!r}")
    h_vals = None
    if H is not None and np.any(t != t[0]):
        n = q.shape[1]
        order = ["t"] + [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
        kern = H.kernel(order)
        h_vals = np.array([kern.value(np.concatenate(([t[k]], q[k], p[k]))) for k in range(m)])
    if rule == "trapezoid" or m < 5:
        dq = np.roll(q, -1, axis=0) - q
        pm = 0.5 * (np.roll(p, -1, axis=0) + p)
        total = float(np.sum(pm * dq))
        if h_vals is not None:
            total -= float(np.sum(0.5 * (np.roll(h_vals, -1) + h_vals) * (np.roll(t, -1) - t)))
        return total
    total = float(np.sum(p * _index_derivative(q)))
    if h_vals is not None:
        total -= float(np.sum(h_vals * _index_derivative(t)))
    return total

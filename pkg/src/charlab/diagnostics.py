"""Grid-level nonidentity measurements.

A derivative field p sampled on a tensor grid is closed (locally a gradient)
exactly when its commutator K_ij = dp_j/dx^i - dp_i/dx^j vanishes.  These
routines estimate K with central differences on interior nodes, flag jumps
in p, and set the on-strip closure defects of a strip family beside the
off-strip commutator norms of a grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, GridTooSmall
from .expr import Expression
from .forms import CurveSample, closure_residual

KINK_FACTOR = 10.0


@dataclass
class GridField:
    """Samples of u and/or p on the tensor grid spanned by ``axes``.

    ``u`` has the grid shape, ``p`` the grid shape plus a trailing axis of
    length n.
    """

    axes: list
    u: np.ndarray | None = None
    p: np.ndarray | None = None

    def __post_init__(self):
        self.axes = [np.asarray(a, float) for a in self.axes]
        shape = tuple(a.size for a in self.axes)
        if self.u is not None:
            self.u = np.asarray(self.u, float)
            if self.u.shape != shape:
                raise DimensionMismatch(f"u has shape {self.u.shape}, grid is {shape}")
        if self.p is not None:
            self.p = np.asarray(self.p, float)
            if self.p.shape != shape + (len(shape),):
                raise DimensionMismatch(f"p has shape {self.p.shape}, expected {shape + (len(shape),)}")

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a.size for a in self.axes)

    def mesh(self) -> np.ndarray:
        """Node coordinates, shape grid + (n,)."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)


def grid_axes(lows, highs, counts) -> list:
    return [np.linspace(lo, hi, c) for lo, hi, c in zip(lows, highs, counts)]


def sample_scalar(u: Expression, axes) -> GridField:
    names = [f"x{i + 1}" for i in range(len(axes))]
    kern = u.kernel(names)
    g = GridField(axes)
    pts = g.mesh().reshape(-1, g.n)
    g.u = np.array([kern.value(x) for x in pts]).reshape(g.shape)
    return g


def sample_covector(p_field: Sequence[Expression], axes) -> GridField:
    names = [f"x{i + 1}" for i in range(len(axes))]
    if len(p_field) != len(axes):
        raise DimensionMismatch(f"{len(p_field)} components on a {len(axes)}-dimensional grid")
    kerns = [e.kernel(names) for e in p_field]
    g = GridField(axes)
    pts = g.mesh().reshape(-1, g.n)
    g.p = np.array([[k.value(x) for k in kerns] for x in pts]).reshape(g.shape + (g.n,))
    return g


def _check_size(g: GridField):
    if any(c < 3 for c in g.shape):
        raise GridTooSmall(f"grid {g.shape} needs at least 3 nodes per axis")


def _interior(n):
    return (slice(1, -1),) * n


def _central(f: np.ndarray, axes, axis: int) -> np.ndarray:
    """Central difference of ``f`` along ``axis``, on interior nodes of every axis."""
    n = len(axes)
    x = axes[axis]
    lo = [slice(1, -1)] * n
    hi = [slice(1, -1)] * n
    lo[axis] = slice(0, -2)
    hi[axis] = slice(2, None)
    shape = [1] * n
    shape[axis] = x.size - 2
    width = (x[2:] - x[:-2]).reshape(shape)
    return (f[tuple(hi)] - f[tuple(lo)]) / width


@dataclass
class NonidentityReport:
    """Commutator norms on interior nodes (axes restricted accordingly).

    ``k`` holds the full antisymmetric matrix per node; ``norms`` its norm
    over independent components.  ``kinks`` lists (axis, coordinate) of
    flagged jumps in p.  ``strip_residuals`` is filled by :func:`compare_on_off`.
    """

    axes: list
    k: np.ndarray
    norms: np.ndarray
    kinks: list = field(default_factory=list)
    strip_residuals: list | None = None
    family_absent: bool = True

    @property
    def max(self) -> float:
        return float(np.max(self.norms))

    @property
    def mean(self) -> float:
        return float(np.mean(self.norms))

    @property
    def min(self) -> float:
        return float(np.min(self.norms))

    @property
    def argmax(self) -> np.ndarray:
        idx = np.unravel_index(int(np.argmax(self.norms)), self.norms.shape)
        return np.array([a[i] for a, i in zip(self.axes, idx)])


def find_kinks(g: GridField) -> list:
    """(axis, midpoint coordinate) of every adjacent-node jump in p that
    exceeds 10x the median adjacent difference along that axis.

    This is a scale-free heuristic; a small absolute floor keeps roundoff
    noise in piecewise-constant fields from being flagged.
    """
    out = []
    scale = float(np.max(np.abs(g.p))) if g.p.size else 0.0
    for axis in range(g.n):
        jumps = np.linalg.norm(np.diff(g.p, axis=axis), axis=-1)
        threshold = KINK_FACTOR * float(np.median(jumps)) + 1e-8 * (1.0 + scale)
        hits = np.argwhere(jumps > threshold)
        x = g.axes[axis]
        cols = sorted({int(i[axis]) for i in hits})
        out.extend((axis, float(0.5 * (x[c] + x[c + 1]))) for c in cols)
    return out


def commutator_field(g: GridField) -> NonidentityReport:
    if g.p is None:
        raise ValueError("grid carries no p components")
    _check_size(g)
    n = g.n
    # d[..., i, j] = dp_j / dx^i
    d = np.stack([np.stack([_central(g.p[..., j], g.axes, i) for j in range(n)], axis=-1) for i in range(n)], axis=-2)
    k = np.zeros_like(d)
    for i in range(n):
        for j in range(i + 1, n):
            k[..., i, j] = d[..., i, j] - d[..., j, i]
            k[..., j, i] = -k[..., i, j]
    iu = np.triu_indices(n, 1)
    norms = np.sqrt(np.sum(k[..., iu[0], iu[1]] ** 2, axis=-1)) if n > 1 else np.zeros(d.shape[:-2])
    return NonidentityReport([a[1:-1] for a in g.axes], k, norms, find_kinks(g))


def differentiate_scalar_field(g: GridField) -> GridField:
    """p = grad u by central differences; the result lives on interior nodes."""
    if g.u is None:
        raise ValueError("grid carries no u samples")
    _check_size(g)
    p = np.stack([_central(g.u, g.axes, i) for i in range(g.n)], axis=-1)
    return GridField([a[1:-1] for a in g.axes], u=g.u[_interior(g.n)], p=p)


def compare_on_off(strips, g: GridField) -> NonidentityReport:
    """Commutator report for ``g`` plus the closure residual of every strip.

    ``strips`` may be a StripFamily, a list of strips or CurveSamples, or
    None/empty, in which case only the grid side is reported.
    """
    if g.p is None:
        g = differentiate_scalar_field(g)
    report = commutator_field(g)
    curves = []
    if strips is not None:
        items = getattr(strips, "strips", strips)
        for s in items:
            c = s if isinstance(s, CurveSample) else s.as_curve()
            curves.append(c)
    if not curves:
        return report
    for c in curves:
        dim = c.x.shape[1]
        # evolution strips carry time as an extra leading coordinate
        if dim not in (g.n, g.n + 1):
            raise DimensionMismatch(f"strip of dimension {dim} against a {g.n}-dimensional grid")
    report.strip_residuals = [closure_residual(c) for c in curves]
    report.family_absent = False
    return report

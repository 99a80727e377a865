"""Run a validated scenario: dispatch by kind, collect scalars, write artifacts.

Artifacts in the output directory:

* ``strips.csv`` (PDE kinds) or ``trajectory.csv`` (mechanics kinds), header
  ``strip_id,param,x1..xn,u,p1..pn,F_residual,closure_defect`` (mechanics use
  q and s in place of x and u; F_residual holds the energy deviation),
* ``grid.csv`` when a ``[grid]`` section is present,
* ``report.txt``, one ``name = value [tol, pass|fail]`` line per scalar.

Floats are written with 17 significant digits so doubles round-trip.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import characteristics as ch
from . import diagnostics as dg
from . import hamiltonian as hm
from .errors import CharlabError, RunFailure
from .forms import circle_loop, closure_residual
from .scenario import ProblemSpec

EXIT_OK, EXIT_TOLERANCE, EXIT_SPEC, EXIT_RUNTIME = 0, 1, 2, 3


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


@dataclass
class Entry:
    name: str
    value: object
    tol: float | None = None  # None: informational, never fails
    limit: str = "max"  # "max": |value| <= tol; "abs": |value - target| <= tol
    target: float = 0.0

    @property
    def passed(self) -> bool:
        if self.tol is None:
            return True
        if isinstance(self.value, str):
            return False
        v = float(self.value)
        if not math.isfinite(v):
            return False
        if self.limit == "abs":
            return abs(v - self.target) <= self.tol
        return abs(v) <= self.tol

    def line(self) -> str:
        value = self.value if isinstance(self.value, str) else fmt(self.value)
        if self.tol is None:
            return f"{self.name} = {value} [-, info]"
        tol = fmt(self.tol) if self.limit == "max" else f"{fmt(self.target)} +- {fmt(self.tol)}"
        return f"{self.name} = {value} [{tol}, {'pass' if self.passed else 'fail'}]"


@dataclass
class RunReport:
    title: str
    kind: str
    entries: list = field(default_factory=list)
    files: dict = field(default_factory=dict)  # artifact name -> text

    def add(self, name, value, tol=None, **kw):
        self.entries.append(Entry(name, value, tol, **kw))

    def __getitem__(self, name):
        for e in self.entries:
            if e.name == name:
                return e.value
        raise KeyError(name)

    def __contains__(self, name):
        return any(e.name == name for e in self.entries)

    @property
    def status(self) -> str:
        return "ok" if all(e.passed for e in self.entries) else "fail"

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.status == "ok" else EXIT_TOLERANCE

    @property
    def failures(self) -> list:
        return [e.name for e in self.entries if not e.passed]

    def text(self) -> str:
        lines = [f"case = {self.title} [-, info]", f"kind = {self.kind} [-, info]"]
        lines += [e.line() for e in self.entries]
        lines.append(f"status = {self.status}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (out / name).write_text(text, encoding="utf-8")
        (out / "report.txt").write_text(self.text(), encoding="utf-8")
        return out


@contextlib.contextmanager
def _stage(key):
    """Tag module errors with the scenario key that led to them."""
    try:
        yield
    except RunFailure:
        raise
    except CharlabError as err:
        raise RunFailure(key, err) from err


def _vars(prefix, n):
    return [f"{prefix}{i + 1}" for i in range(n)]


def _csv(header, ids, values) -> str:
    """Rows of integer ids followed by %.17g floats (same text as ``fmt``)."""
    ids = np.asarray(ids, dtype=np.int64).reshape(len(values), -1)
    values = np.asarray(values, dtype=float)
    line = ",".join(["%d"] * ids.shape[1] + ["%.17g"] * values.shape[1])
    out = [",".join(header)]
    out += [line % (*a, *b) for a, b in zip(ids.tolist(), values.tolist())]
    return "\n".join(out) + "\n"


def strip_csv(strips, n) -> str:
    header = ["strip_id", "param", *_vars("x", n), "u", *_vars("p", n), "F_residual", "closure_defect"]
    ids, blocks = [], []
    for sid, s in enumerate(strips):
        res = s.residuals if s.residuals is not None else np.full(len(s), np.nan)
        # evolution strips carry time as their parameter
        blocks.append(np.column_stack((s.param, s.x, s.u, s.p, res, s.closure_defects())))
        ids.append(np.full(len(s), sid))
    return _csv(header, np.concatenate(ids), np.concatenate(blocks))


def trajectory_csv(traj, n) -> str:
    header = ["strip_id", "param", *_vars("q", n), "s", *_vars("p", n), "F_residual", "closure_defect"]
    dev = np.abs(traj.energy - traj.energy[0])
    block = np.column_stack((traj.t, traj.q, traj.s, traj.p, dev, traj.closure_defects()))
    return _csv(header, np.zeros(len(traj)), block)


def _grid_field(spec: ProblemSpec):
    n = spec.dim
    axes = dg.grid_axes(spec.get("grid", "lows"), spec.get("grid", "highs"), [int(c) for c in spec.get("grid", "counts")])
    u = spec.get("grid", "u")
    if u is not None:
        # K lives two nodes in from every edge: one for grad u, one for K
        return dg.differentiate_scalar_field(dg.sample_scalar(u, axes)), 1
    return dg.sample_covector([spec.get("grid", v) for v in _vars("p", n)], axes), 0


def grid_csv(g: dg.GridField, report: dg.NonidentityReport, offset: int) -> str:
    n = g.n
    letters = "ijklmnopqr"[:n]
    header = [*letters, *_vars("x", n), "u", *_vars("p", n), "K_norm"]
    inner = tuple(slice(1, -1) for _ in range(n))
    u = g.u[inner] if g.u is not None else None
    p = g.p[inner]
    ids, rows = [], []
    for idx in np.ndindex(report.norms.shape):
        x = [a[i] for a, i in zip(report.axes, idx)]
        uu = u[idx] if u is not None else math.nan
        ids.append([i + 1 + offset for i in idx])
        rows.append([*x, uu, *p[idx], report.norms[idx]])
    return _csv(header, ids, rows)


def _grid_side(spec, report, family):
    with _stage("grid"):
        g, offset = _grid_field(spec)
        nr = dg.compare_on_off(family, g)
    report.files["grid.csv"] = grid_csv(g, nr, offset)
    report.add("grid_K_max", nr.max)
    report.add("grid_K_mean", nr.mean)
    report.add("grid_K_min", nr.min)
    report.add("grid_kinks", len(nr.kinks))


def _run_general(spec: ProblemSpec, report: RunReport, threads):
    n = spec.dim
    tol = spec.tolerances
    with _stage("F"):
        prob = ch.PdeProblem("general", n, spec.expr("F"))
    xs = [spec.get("seeds", v) for v in _vars("x", n)]
    ps = [spec.get("seeds", v) for v in _vars("p", n)]
    us = spec.get("seeds", "u")
    seeds = [ch.JetPoint([x[k] for x in xs], us[k], [p[k] for p in ps]) for k in range(len(us))]
    with _stage("seeds"):
        family = ch.integrate_family(prob, seeds, spec.t_end, spec.dt, threads=threads)
    report.files["strips.csv"] = strip_csv(family.strips, n)
    report.add("strips", len(family))
    report.add("failed_strips", len(family.failures), 0.0)
    report.add("max_F", max(float(np.max(np.abs(s.residuals))) for s in family.strips), tol["tol_F"])
    report.add("closure", max(closure_residual(s.as_curve()) for s in family.strips), tol["tol_closure"])
    if spec.has("grid"):
        _grid_side(spec, report, family)


def _run_evolution(spec: ProblemSpec, report: RunReport, threads):
    n = spec.dim
    tol = spec.tolerances
    t0 = spec.get("integration", "t0")
    with _stage("E"):
        prob = ch.PdeProblem("evolution", n, spec.expr("E"))
    grid = ch.SeedGrid(tuple(spec.get("seeds", "lows")), tuple(spec.get("seeds", "highs")), tuple(int(c) for c in spec.get("seeds", "counts")))
    with _stage("u0"):
        seeds = ch.seed_from_initial_data(prob, spec.expr("u0"), grid)
    with _stage("E"):
        family = ch.integrate_family(prob, seeds, spec.t_end, spec.dt, t0=t0, threads=threads)
    report.files["strips.csv"] = strip_csv(family.strips, n)
    report.add("strips", len(family))
    report.add("failed_strips", len(family.failures), 0.0)
    report.add("closure", max(closure_residual(s.as_curve()) for s in family.strips), tol["tol_closure"])

    crossing = ch.detect_crossing(family) if len(family) >= 3 else None
    want_t = spec.get("expect", "crossing_t")
    want_x = spec.get("expect", "crossing_x")
    if crossing is None:
        report.add("crossing_t", "none", tol["tol_crossing"] if want_t is not None else None)
    else:
        kw = dict(limit="abs", target=want_t) if want_t is not None else {}
        report.add("crossing_t", crossing.t, tol["tol_crossing"] if want_t is not None else None, **kw)
        kw = dict(limit="abs", target=want_x) if want_x is not None else {}
        report.add("crossing_x", crossing.x, tol["tol_crossing"] if want_x is not None else None, **kw)

    jump_t = spec.get("expect", "jump_t")
    jump_t = family.times[-1] if jump_t is None else jump_t
    if len(family) >= 2:
        with _stage("jump_t"):
            scan = ch.jump_scan(family, jump_t)
        want = spec.get("expect", "jump")
        report.add("jump_t", jump_t)
        kw = dict(limit="abs", target=want) if want is not None else {}
        report.add("jump", scan.max_gap, tol["tol_jump"] if want is not None else None, **kw)
        report.add("jump_x", scan.location)
        report.add("jump_multivalued", scan.multivalued)
    if spec.has("grid"):
        _grid_side(spec, report, family)


def _run_hamiltonian(spec: ProblemSpec, report: RunReport, threads):
    n = spec.dim
    tol = spec.tolerances
    t0 = spec.get("integration", "t0")
    with _stage("H"):
        hp = hm.HamiltonianProblem(n, spec.expr("H"), spec.get("problem", "separable"))
        start = hm.PhasePoint(t0, spec.get("initial", "q"), spec.get("initial", "p"))
        traj = hm.hamiltonian_flow(hp, start, spec.t_end, spec.dt, spec.method)
    report.files["trajectory.csv"] = trajectory_csv(traj, n)
    drift = float(np.max(np.abs(traj.energy - traj.energy[0])))
    report.add("energy_drift", drift, tol["tol_energy"] if hp.autonomous else None)
    report.add("action", traj.s[-1])

    loop = None
    if spec.has("loop"):
        cq = spec.get("loop", "center_q") or [0.0] * n
        cp = spec.get("loop", "center_p") or [0.0] * n
        loop = circle_loop(spec.get("loop", "points"), spec.get("loop", "radius"), cq, cp, t0, n, spec.get("loop", "plane") - 1)
        with _stage("loop"):
            res = hm.poincare_invariance(hp, loop, spec.t_end, spec.dt, spec.method, threads)
        report.add("loop_initial", res.initial)
        report.add("loop_final", res.final)
        report.add("loop_drift", res.drift, tol["tol_loop"])

    if spec.has("canonical"):
        with _stage("canonical"):
            cmap = hm.CanonicalMap(
                n,
                tuple(spec.get("canonical", v) for v in _vars("Q", n)),
                tuple(spec.get("canonical", v) for v in _vars("P", n)),
                spec.get("canonical", "W"),
            )
            probe = loop if loop is not None else circle_loop(256, dim=n)
            _, q, p = probe.points()
            picks = np.unique(np.linspace(0, q.shape[0] - 1, spec.get("canonical", "samples")).round().astype(int))
            rep = hm.canonical_check(cmap, [probe], [(q[k], p[k]) for k in picks])
        report.add("symplectic", rep.symplectic, tol["tol_symplectic"])
        report.add("form", rep.form, tol["tol_form"])
        if rep.generating is not None:
            report.add("generating", rep.generating, tol["tol_symplectic"])


def _run_lagrangian(spec: ProblemSpec, report: RunReport, threads):
    n = spec.dim
    tol = spec.tolerances
    t0 = spec.get("integration", "t0")
    L = spec.expr("L")
    with _stage("L"):
        lp = hm.LagrangianProblem(n, L)
        start = hm.VelocityPoint(t0, spec.get("initial", "q"), spec.get("initial", "qd"))
        traj = hm.lagrange_flow(lp, start, spec.t_end, spec.dt)
    report.files["trajectory.csv"] = trajectory_csv(traj, n)
    drift = float(np.max(np.abs(traj.energy - traj.energy[0])))
    report.add("energy_drift", drift, tol["tol_energy"] if "t" not in L.free_vars else None)
    report.add("action", traj.s[-1])

    H = spec.expr("H")
    if H is None:
        return
    with _stage("H"):
        hp = hm.HamiltonianProblem(n, H)
        dev = hm.equivalence_check(lp, hp, start, spec.t_end, spec.dt, lagrange=traj)
    report.add("equivalence", dev, tol["tol_equiv"])
    rng = np.random.default_rng(spec.get("eq11", "seed"))
    box = spec.get("eq11", "box")
    samples = []
    for _ in range(spec.get("eq11", "samples")):
        t = rng.uniform(0.0, 1.0)
        samples.append(hm.VelocityPoint(t, rng.uniform(-box, box, n), rng.uniform(-box, box, n)))
    with _stage("H"):
        eq = hm.verify_eq11(lp, hp, samples)
    report.add("eq11_velocity", eq.velocity, tol["tol_eq11"])
    report.add("eq11_position", eq.position, tol["tol_eq11"])
    report.add("eq11_time", eq.time, tol["tol_eq11"])
    report.add("eq11_blind_to_constants", eq.blind_to_constants)


_DISPATCH = {
    "general_pde": _run_general,
    "evolution_hj": _run_evolution,
    "hamiltonian": _run_hamiltonian,
    "lagrangian": _run_lagrangian,
}


def run(spec: ProblemSpec, threads: int | None = None) -> RunReport:
    """Execute ``spec`` in memory; call :meth:`RunReport.write` to emit files."""
    report = RunReport(spec.title, spec.kind)
    _DISPATCH[spec.kind](spec, report, threads)
    return report

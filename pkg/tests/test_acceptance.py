"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Every line shows the measured values next to the pinned tolerances and the
wall-clock runtime next to its budget.  A criterion passes only if all of
its checks and its runtime budget hold.
"""

import math
import os
import subprocess
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from charlab.characteristics import (
    JetPoint,
    PdeProblem,
    SeedGrid,
    branch_values,
    detect_crossing,
    integrate_family,
    integrate_strip,
    seed_from_initial_data,
)
from charlab.cli import _load, bundled_cases
from charlab.diagnostics import commutator_field, grid_axes, sample_covector
from charlab.expr import evaluate, grad, hessian, parse
from charlab.forms import circle_loop, closure_residual, loop_integral
from charlab.hamiltonian import (
    CanonicalMap,
    HamiltonianProblem,
    LagrangianProblem,
    PhasePoint,
    VelocityPoint,
    canonical_check,
    equivalence_check,
    hamiltonian_flow,
    poincare_invariance,
    verify_eq11,
)
from charlab.runner import run


class Criterion:
    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.checks = []
        self.elapsed = 0.0

    def check(self, label, value, ok, rule):
        self.checks.append((label, value, bool(ok), rule))

    def info(self, label, value):
        self.checks.append((label, value, None, "info"))

    @property
    def passed(self):
        return all(ok is not False for _, _, ok, _ in self.checks) and self.elapsed < self.budget

    def line(self):
        parts = []
        for label, value, ok, rule in self.checks:
            shown = value if isinstance(value, str) else f"{value:.3e}"
            mark = "" if ok is None else (" ok" if ok else " FAILED")
            parts.append(f"{label}={shown} [{rule}]{mark}")
        timing = f"runtime {self.elapsed:.2f}s [< {self.budget:g}s]"
        verdict = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:2d} {verdict}: {self.title}; " + "; ".join(parts) + f"; {timing}"


@contextmanager
def criterion(capsys, number, title, budget):
    c = Criterion(number, title, budget)
    start = time.perf_counter()
    try:
        yield c
    finally:
        c.elapsed = time.perf_counter() - start
        with capsys.disabled():
            print("\n" + c.line())
    assert c.passed, c.line()


def ham(text, n=1, separable=False):
    return HamiltonianProblem(n, parse(text), separable)


def lag(text, n=1):
    return LagrangianProblem(n, parse(text))


# --- 1 -------------------------------------------------------------------------


def eikonal_rays(dt, angles):
    prob = PdeProblem("general", 2, parse("p1^2 + p2^2 - 1"))
    strips = [integrate_strip(prob, JetPoint([math.cos(a), math.sin(a)], 1.0, [math.cos(a), math.sin(a)]), 5.0, dt) for a in angles]
    max_f = max(float(np.max(s.residuals)) for s in strips)
    # exact ray from the unit circle: x = 11 (cos a, sin a), u = 11 at s = 5
    err = max(max(np.max(np.abs(s.x[-1] - 11 * np.array([math.cos(a), math.sin(a)]))), abs(s.u[-1] - 11.0)) for s, a in zip(strips, angles))
    return max_f, err


def test_first_integral_on_eikonal_strips(capsys):
    with criterion(capsys, 1, "first integral along eikonal strips", 1.0) as c:
        angles = 2 * np.pi * np.arange(8) / 8
        max_f, err = eikonal_rays(1e-3, angles)
        c.check("max|F|", max_f, max_f <= 1e-8, "<= 1e-8")
        # halving dt on one diagonal ray
        _, err1 = eikonal_rays(1e-3, angles[1:2])
        _, err2 = eikonal_rays(5e-4, angles[1:2])
        ratio = err1 / err2 if err2 > 0 else math.inf
        c.info("endpoint_err(dt)", err1)
        c.info("endpoint_err(dt/2)", err2)
        c.check("halving_ratio", ratio, ratio >= 10.0, ">= 10")


# --- 2 -------------------------------------------------------------------------


def test_closure_on_pseudostructures(capsys):
    with criterion(capsys, 2, "closure on corpus strips and nonidentity off them", 1.0) as c:
        worst = 0.0
        for name in ("eikonal", "advection", "burgers_quadratic", "burgers_tanh"):
            spec = _load(name)
            if spec.kind == "general_pde":
                prob = PdeProblem("general", 2, spec.expr("F"))
                xs = [spec.get("seeds", v) for v in ("x1", "x2")]
                ps = [spec.get("seeds", v) for v in ("p1", "p2")]
                seeds = [JetPoint([x[k] for x in xs], u, [p[k] for p in ps]) for k, u in enumerate(spec.get("seeds", "u"))]
            else:
                prob = PdeProblem("evolution", 1, spec.expr("E"))
                grid = SeedGrid(tuple(spec.get("seeds", "lows")), tuple(spec.get("seeds", "highs")), tuple(int(v) for v in spec.get("seeds", "counts")))
                seeds = seed_from_initial_data(prob, spec.expr("u0"), grid)
            fam = integrate_family(prob, seeds, spec.t_end, spec.dt)
            worst = max(worst, max(closure_residual(s.as_curve()) for s in fam.strips))
        c.check("max_closure_defect", worst, worst <= 1e-8, "<= 1e-8")
        g = sample_covector([parse("x2"), parse("-x1")], grid_axes([-1, -1], [1, 1], [21, 21]))
        r = commutator_field(g)
        dev = max(abs(r.max - 2.0), abs(r.min - 2.0))
        c.check("|K|-2 on (y,-x)", dev, dev <= 1e-6, "<= 1e-6")


# --- 3 -------------------------------------------------------------------------


def test_hamiltonian_flow_as_characteristics(capsys):
    with criterion(capsys, 3, "Hamilton flow equals characteristics of u_t + H = 0", 1.0) as c:
        tr = hamiltonian_flow(ham("p1^2/2 + q1^2/2"), PhasePoint(0, [1.0], [0.0]), 10.0, 1e-3)
        strip = integrate_strip(PdeProblem("evolution", 1, parse("p1^2/2 + x1^2/2")), JetPoint([1.0], 0.0, [0.0]), 10.0, 1e-3)
        dev = float(max(np.max(np.abs(tr.q - strip.x)), np.max(np.abs(tr.p - strip.p))))
        c.check("sup|dev|", dev, dev <= 1e-10, "<= 1e-10")


# --- 4 -------------------------------------------------------------------------


def test_lagrange_hamilton_equivalence(capsys):
    with criterion(capsys, 4, "Lagrange and Hamilton flows agree; Legendre identities", 2.0) as c:
        pairs = {
            "oscillator": ("qd1^2/2 - q1^2/2", "p1^2/2 + q1^2/2", VelocityPoint(0, [1.0], [0.0])),
            "free_particle": ("qd1^2/2", "p1^2/2", VelocityPoint(0, [0.0], [3.0])),
        }
        rng = np.random.default_rng(0)
        for name, (ltext, htext, start) in pairs.items():
            lp, hp = lag(ltext), ham(htext)
            dev = equivalence_check(lp, hp, start, 10.0, 1e-3)
            c.check(f"{name}_equiv", dev, dev <= 1e-6, "<= 1e-6")
            samples = [VelocityPoint(rng.uniform(-2, 2), rng.uniform(-2, 2, 1), rng.uniform(-2, 2, 1)) for _ in range(100)]
            r = verify_eq11(lp, hp, samples)
            worst = max(r.velocity, r.position, r.time)
            c.check(f"{name}_eq11", worst, worst <= 1e-10, "<= 1e-10")
        # the Hamiltonian has the wrong potential
        bad = equivalence_check(lag("qd1^2/2 - q1^2/2"), ham("p1^2/2 + q1^2"), VelocityPoint(0, [1.0], [0.0]), 1.0, 1e-3)
        c.check("mismatched_equiv", bad, bad > 0.1, "> 0.1")


# --- 5 -------------------------------------------------------------------------


def test_poincare_invariant(capsys):
    with criterion(capsys, 5, "Poincare loop invariant under transport", 5.0) as c:
        loop = circle_loop(256)
        for name, text in (("oscillator", "p1^2/2 + q1^2/2"), ("shear", "p1^2/2")):
            res = poincare_invariance(ham(text), loop, 1.0, 1e-3)
            c.check(f"{name}_drift", res.drift, res.drift <= 1e-6, "<= 1e-6")
        i0 = loop_integral(loop)
        c.check("I0+pi", abs(i0 + math.pi), abs(i0 + math.pi) <= 1e-4, "<= 1e-4")
        errs = [abs(loop_integral(circle_loop(n), rule="trapezoid") + math.pi) for n in (64, 128, 256)]
        ratios = [errs[0] / errs[1], errs[1] / errs[2]]
        c.check("trapezoid_ratio", min(ratios), all(3.5 <= q <= 4.5 for q in ratios), "in [3.5, 4.5]")
        fine = [abs(loop_integral(circle_loop(n)) + math.pi) for n in (32, 64)]
        c.check("default_rule_ratio", fine[0] / fine[1], fine[0] / fine[1] >= 4.0, ">= 4")


# --- 6 -------------------------------------------------------------------------


def test_canonical_transformations(capsys):
    with criterion(capsys, 6, "canonical maps pass, non-canonical map fails", 1.0) as c:
        loops = [circle_loop(256), circle_loop(256, radius=0.5, center_q=1.0, center_p=-0.5)]
        rng = np.random.default_rng(0)
        samples = [(rng.uniform(-2, 2, 1), rng.uniform(-2, 2, 1)) for _ in range(16)]
        maps = {
            "identity": ("q1", "p1"),
            "scaling": ("2*q1", "p1/2"),
            "rotation": ("cos(0.3)*q1 + sin(0.3)*p1", "-sin(0.3)*q1 + cos(0.3)*p1"),
        }
        for name, (q, p) in maps.items():
            r = canonical_check(CanonicalMap(1, (parse(q),), (parse(p),)), loops, samples)
            c.check(f"{name}_symplectic", r.symplectic, r.symplectic <= 1e-10, "<= 1e-10")
            c.check(f"{name}_form", r.form, r.form <= 1e-4, "<= 1e-4")
        r = canonical_check(CanonicalMap(1, (parse("2*q1"),), (parse("p1"),)), loops, samples)
        c.check("noncanonical_symplectic", r.symplectic, r.symplectic >= 0.5, ">= 0.5")


# --- 7 -------------------------------------------------------------------------


def fold_root():
    # positive root of x0 = 2 tanh(x0), by bisection
    lo, hi = 1.0, 3.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if mid - 2 * math.tanh(mid) > 0 else (mid, hi)
    return 0.5 * (lo + hi)


def burgers(u0, lo, hi, count, t_end):
    prob = PdeProblem("evolution", 1, parse("p1^2/2"))
    seeds = seed_from_initial_data(prob, parse(u0), SeedGrid((lo,), (hi,), (count,)))
    return integrate_family(prob, seeds, t_end, 1e-2)


def test_crossing_and_jump_detection(capsys):
    with criterion(capsys, 7, "Burgers crossings and post-crossing jump", 5.0) as c:
        quad = detect_crossing(burgers("-x1^2/2", -2, 2, 41, 1.5))
        c.check("t*_quadratic", quad.t, abs(quad.t - 1.0) <= 1e-2, "1 +- 1e-2")
        fam = burgers("-log(cosh(x1))", -3, 3, 121, 2.0)
        cross = detect_crossing(fam)
        c.check("t*_logcosh", cross.t, abs(cross.t - 1.0) <= 1e-2, "1 +- 1e-2")
        vals = branch_values(fam, 2.0, 0.0)
        spread = float(vals.max() - vals.min())
        target = 2 * math.tanh(fold_root())
        c.check("branch_dp", spread, abs(spread - target) <= 1e-2, f"{target:.4f} +- 1e-2")


# --- 8 -------------------------------------------------------------------------

NAMES = ["x1", "x2", "x3"]


def random_expression(rng, depth):
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.7:
            return NAMES[rng.integers(3)]
        return f"{rng.uniform(0.5, 2.0):.3f}"
    a = random_expression(rng, depth - 1)
    b = random_expression(rng, depth - 1)
    forms = [
        f"({a}) + ({b})",
        f"({a}) - ({b})",
        f"({a}) * ({b})",
        f"({a}) / (2 + ({b})^2)",
        f"({a})^2",
        f"({a})^3",
        f"sin({a})",
        f"cos({a})",
        f"tanh({a})",
        f"exp(0.5*sin({a}))",
        f"sqrt(1 + ({a})^2)",
        f"log(2 + ({a})^2)",
    ]
    return forms[rng.integers(len(forms))]


def fd_gradient_and_hessian(e, point, h=1e-4):
    f = lambda x: evaluate(e, dict(zip(NAMES, x)))  # noqa: E731
    x = np.asarray(point, float)
    eye = np.eye(3) * h
    g = np.array([(f(x + eye[i]) - f(x - eye[i])) / (2 * h) for i in range(3)])
    hs = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            hs[i, j] = (f(x + eye[i] + eye[j]) - f(x + eye[i] - eye[j]) - f(x - eye[i] + eye[j]) + f(x - eye[i] - eye[j])) / (4 * h * h)
    return g, hs


def rel(a, b):
    # norm-wise relative error, with an absolute floor for vanishing derivatives
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1.0))


def test_ad_against_finite_differences(capsys):
    rng = np.random.default_rng(2024)
    cases = []
    while len(cases) < 100:
        text = random_expression(rng, 4)
        e = parse(text)
        if not e.free_vars:
            continue
        cases.append((e, rng.uniform(-1, 1, 3)))
    with criterion(capsys, 8, "AD gradient and Hessian vs central differences", 1.0) as c:
        worst_g = worst_h = 0.0
        for e, x in cases:
            env = dict(zip(NAMES, x))
            fd_g, fd_h = fd_gradient_and_hessian(e, x)
            worst_g = max(worst_g, rel(grad(e, NAMES, env), fd_g))
            worst_h = max(worst_h, rel(hessian(e, NAMES, env), fd_h))
        c.info("pairs", str(len(cases)))
        c.check("grad_rel_err", worst_g, worst_g <= 1e-6, "<= 1e-6")
        c.check("hess_rel_err", worst_h, worst_h <= 1e-6, "<= 1e-6")


# --- 9 -------------------------------------------------------------------------


def test_symplectic_integrator_contract(capsys):
    with criterion(capsys, 9, "verlet energy stays bounded, rk4 drifts", 10.0) as c:
        hp = ham("p1^2/2 + q1^2/2", separable=True)
        start = PhasePoint(0, [1.0], [0.0])
        v = hamiltonian_flow(hp, start, 1000.0, 1e-2, "verlet")
        err = np.abs(v.energy - v.energy[0])
        half = err.size // 2
        lead, trail = float(np.max(err[:half])), float(np.max(err[half:]))
        c.check("verlet_max_err", float(err.max()), err.max() <= 1e-3, "<= 1e-3")
        c.check("trail/lead", trail / lead, trail <= 1.5 * lead, "<= 1.5")
        r = hamiltonian_flow(hp, start, 1000.0, 1e-2, "rk4")
        steps = np.diff(r.energy)
        monotone = bool(np.all(steps <= 0) or np.all(steps >= 0))
        c.check("rk4_drift", float(abs(r.energy[-1] - r.energy[0])), monotone and r.energy[-1] != r.energy[0], "monotone")


# --- 10 ------------------------------------------------------------------------


def run_all(out, threads):
    env = dict(os.environ, CHARLAB_THREADS=str(threads))
    codes = {}
    for name in bundled_cases():
        cmd = [sys.executable, "-m", "charlab", "run", name, "--out", str(out / name), "--quiet"]
        codes[name] = subprocess.run(cmd, env=env, capture_output=True).returncode
    files = {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
    return codes, files


def test_cli_runs_are_deterministic(capsys, tmp_path):
    with criterion(capsys, 10, "byte-identical CLI outputs with 1 and 4 threads", 20.0) as c:
        passes = {}
        for threads in (1, 4):
            for k in (1, 2):
                passes[(threads, k)] = run_all(tmp_path / f"t{threads}_{k}", threads)
        reference = passes[(1, 1)][1]
        same = all(files == reference for _, files in passes.values())
        c.info("cases", str(len(bundled_cases())))
        c.info("files_per_pass", str(len(reference)))
        c.check("identical", str(same), same, "all passes equal")
        codes = passes[(1, 1)][0]
        c.check("exit_codes", str(sorted(set(codes.values()))), set(codes.values()) == {0}, "all 0")


@pytest.mark.parametrize("name", bundled_cases())
def test_bundled_case_reports_ok(name):
    # not a numbered criterion: every corpus case must meet its own tolerances
    assert run(_load(name)).status == "ok"

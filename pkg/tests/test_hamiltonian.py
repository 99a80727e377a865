import math

import numpy as np
import pytest

from charlab.characteristics import JetPoint, PdeProblem, integrate_strip
from charlab.errors import DimensionMismatch, SeparabilityNotDeclared, SingularHessian, ValidationError
from charlab.expr import parse
from charlab.forms import PhaseLoop, circle_loop
from charlab.hamiltonian import (
    CanonicalMap,
    HamiltonianProblem,
    LagrangianProblem,
    PhasePoint,
    VelocityPoint,
    canonical_check,
    equivalence_check,
    hamiltonian_flow,
    lagrange_flow,
    legendre_invert,
    legendre_to_hamiltonian,
    poincare_invariance,
    symplectic_form,
    verify_eq11,
)


def ham(text, n=1, separable=False):
    return HamiltonianProblem(n, parse(text), separable)


def lag(text, n=1):
    return LagrangianProblem(n, parse(text))


def cmap(q, p, w=None):
    return CanonicalMap(1, (parse(q),), (parse(p),), None if w is None else parse(w))


def random_samples(n, count=100, seed=0):
    rng = np.random.default_rng(seed)
    return [VelocityPoint(rng.uniform(0, 1), rng.uniform(-2, 2, n), rng.uniform(-2, 2, n)) for _ in range(count)]


def test_legendre_examples():
    p, h = legendre_to_hamiltonian(lag("qd1^2/2 - q1^2/2"), VelocityPoint(0, [0.0], [2.0]))
    assert (p.tolist(), h) == ([2.0], 2.0)
    p, h = legendre_to_hamiltonian(lag("qd1^2/2"), VelocityPoint(0, [0.0], [0.0]))
    assert (p.tolist(), h) == ([0.0], 0.0)
    p, h = legendre_to_hamiltonian(lag("cosh(qd1)"), VelocityPoint(0, [0.0], [0.5]))
    assert abs(p[0] - math.sinh(0.5)) <= 1e-12
    assert abs(h - (0.5 * math.sinh(0.5) - math.cosh(0.5))) <= 1e-10


def test_legendre_inversion():
    assert legendre_invert(lag("qd1^2/2"), 0, [0.0], [4.0]).tolist() == [4.0]
    assert legendre_invert(lag("2*qd1^2/2"), 0, [0.0], [4.0]).tolist() == [2.0]
    # bisection oracle for sinh(qd) = 1
    lo, hi = 0.0, 2.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if math.sinh(mid) < 1 else (lo, mid)
    qd = legendre_invert(lag("cosh(qd1)"), 0, [0.0], [1.0])[0]
    assert abs(qd - lo) <= 1e-8
    assert abs(qd - math.asinh(1.0)) <= 1e-8


def test_legendre_inversion_two_degrees_of_freedom():
    lp = lag("qd1^2 + qd1*qd2 + qd2^2 + q1*qd2", 2)
    qd = legendre_invert(lp, 0.0, [0.5, -1.0], [1.0, 2.0])
    p, _ = legendre_to_hamiltonian(lp, VelocityPoint(0.0, [0.5, -1.0], qd))
    np.testing.assert_allclose(p, [1.0, 2.0], atol=1e-12)


def test_legendre_inversion_rejects_flat_hessian():
    with pytest.raises(SingularHessian):
        legendre_invert(lag("qd1^4/4"), 0, [0.0], [1.0])
    with pytest.raises(SingularHessian):
        legendre_invert(lag("qd1 + qd2^2/2", 2), 0, [0.0, 0.0], [2.0, 1.0])


def test_newton_start_override():
    qd = legendre_invert(lag("qd1^4/4"), 0, [0.0], [8.0], start=[1.0])
    assert qd[0] == pytest.approx(2.0, abs=1e-12)


def test_problems_check_variables():
    with pytest.raises(ValidationError):
        ham("p1 + x1")
    with pytest.raises(ValidationError):
        lag("qd1^2 + p1")


def test_eq11_analytic_pair():
    r = verify_eq11(lag("qd1^2/2 - q1^2/2"), ham("p1^2/2 + q1^2/2"), random_samples(1))
    assert max(r.velocity, r.position, r.time) <= 1e-10


def test_eq11_blind_to_constants():
    r = verify_eq11(lag("qd1^2/2"), ham("p1^2/2 + 1"), random_samples(1))
    assert (r.velocity, r.position, r.time) == (0.0, 0.0, 0.0)
    assert r.blind_to_constants


def test_eq11_mismatched_potential():
    r = verify_eq11(lag("qd1^2/2"), ham("p1^2/2 + q1"), random_samples(1))
    assert r.position == 1.0
    assert r.velocity == 0.0


def test_eq11_time_dependent_pair():
    # L = qd^2/2 + t q has partner H = p^2/2 - t q; dL/dt = q = -dH/dt
    r = verify_eq11(lag("qd1^2/2 + t*q1"), ham("p1^2/2 - t*q1"), random_samples(1))
    assert max(r.velocity, r.position, r.time) <= 1e-12


def test_eq11_dimension_check():
    with pytest.raises(DimensionMismatch):
        verify_eq11(lag("qd1^2/2"), ham("p1^2/2 + p2^2/2", 2), random_samples(1))


def test_oscillator_flow():
    tr = hamiltonian_flow(ham("(p1^2 + q1^2)/2"), PhasePoint(0, [1.0], [0.0]), math.pi / 2, 1e-3)
    assert abs(tr.q[-1, 0]) <= 1e-9
    assert abs(tr.p[-1, 0] + 1.0) <= 1e-9


def test_free_particle_action():
    tr = hamiltonian_flow(ham("p1^2/2"), PhasePoint(0, [0.0], [1.0]), 1.0, 1e-3)
    assert tr.q[-1, 0] == pytest.approx(1.0, abs=1e-12)
    assert tr.p[-1, 0] == 1.0
    assert abs(tr.s[-1] - 0.5) <= 1e-10


def test_transport_hamiltonian_has_zero_action():
    tr = hamiltonian_flow(ham("p1"), PhasePoint(0, [0.0], [0.0]), 2.0, 1e-2)
    assert tr.q[-1, 0] == pytest.approx(2.0, abs=1e-12)
    assert tr.p[-1, 0] == 0.0
    assert tr.s[-1] == 0.0


def test_action_closure_along_trajectory():
    tr = hamiltonian_flow(ham("(p1^2 + q1^2)/2"), PhasePoint(0, [1.0], [0.0]), 2.0, 1e-3)
    assert np.max(tr.closure_defects()) <= 1e-6


def test_verlet_needs_separable_declaration():
    with pytest.raises(SeparabilityNotDeclared):
        hamiltonian_flow(ham("(p1^2 + q1^2)/2"), PhasePoint(0, [1.0], [0.0]), 1.0, 1e-2, method="verlet")
    tr = hamiltonian_flow(ham("(p1^2 + q1^2)/2", separable=True), PhasePoint(0, [1.0], [0.0]), math.pi / 2, 1e-3, method="verlet")
    assert abs(tr.q[-1, 0]) <= 1e-6


def test_hamilton_flow_matches_characteristics():
    # the Hamiltonian read as an evolution operator E(t, x, p)
    tr = hamiltonian_flow(ham("(p1^2 + q1^2)/2"), PhasePoint(0, [1.0], [0.0]), 10.0, 1e-3)
    strip = integrate_strip(PdeProblem("evolution", 1, parse("(p1^2 + x1^2)/2")), JetPoint([1.0], 0.0, [0.0]), 10.0, 1e-3)
    dev = np.max(np.abs(tr.q - strip.x)) + np.max(np.abs(tr.p - strip.p))
    assert dev <= 1e-10
    # u along the strip carries the action
    assert np.max(np.abs(strip.u - tr.s)) <= 1e-6


def test_lagrange_flow_examples():
    tr = lagrange_flow(lag("qd1^2/2 - q1^2/2"), VelocityPoint(0, [1.0], [0.0]), math.pi / 2, 1e-3)
    assert abs(tr.q[-1, 0]) <= 1e-9
    assert abs(tr.qd[-1, 0] + 1.0) <= 1e-9
    tr = lagrange_flow(lag("qd1^2/2"), VelocityPoint(0, [0.0], [3.0]), 2.0, 1e-3)
    assert tr.q[-1, 0] == pytest.approx(6.0, abs=1e-12)
    assert tr.qd[-1, 0] == 3.0


def test_lagrange_flow_two_degrees_of_freedom():
    # coupled oscillators with a magnetic-like term; compare against the Hamiltonian partner
    lp = lag("(qd1^2 + qd2^2)/2 + q1*qd2 - (q1^2 + q2^2)/2", 2)
    hp = ham("(p1^2 + (p2 - q1)^2)/2 + (q1^2 + q2^2)/2", 2)
    assert equivalence_check(lp, hp, VelocityPoint(0, [1.0, 0.0], [0.0, 0.5]), 2.0, 1e-3) <= 1e-9


def test_degenerate_lagrangian():
    with pytest.raises(SingularHessian):
        lagrange_flow(lag("qd1"), VelocityPoint(0, [0.0], [1.0]), 1.0, 1e-2)


def test_equivalence_pairs():
    start = VelocityPoint(0, [1.0], [0.0])
    assert equivalence_check(lag("qd1^2/2 - q1^2/2"), ham("p1^2/2 + q1^2/2"), start, 10.0, 1e-3) <= 1e-6
    assert equivalence_check(lag("qd1^2/2"), ham("p1^2/2"), VelocityPoint(0, [0.0], [3.0]), 10.0, 1e-3) <= 1e-9
    assert equivalence_check(lag("qd1^2/2 - q1^2/2"), ham("p1^2/2 + q1^2/2 + q1"), start, 1.0, 1e-3) > 0.1


def test_poincare_oscillator_and_shear():
    loop = circle_loop(256)
    for text in ("(p1^2 + q1^2)/2", "p1^2/2"):
        res = poincare_invariance(ham(text), loop, 1.0, 1e-3)
        assert abs(res.initial + math.pi) <= 1e-4
        assert res.drift <= 1e-6


def test_poincare_time_dependent_hamiltonian():
    res = poincare_invariance(ham("p1^2/2 + t*q1^2/2"), circle_loop(128, center_q=0.5), 1.0, 1e-3)
    assert res.drift <= 1e-6


def test_poincare_degenerate_loop():
    point = PhaseLoop([0.0], [[1.0]], [[0.0]])
    res = poincare_invariance(ham("(p1^2 + q1^2)/2"), point, 1.0, 1e-2)
    assert (res.initial, res.final) == (0.0, 0.0)


def test_poincare_two_degrees_of_freedom():
    hp = ham("(p1^2 + p2^2)/2 + q1^2/2 + q1*q2^2", 2)
    loop = circle_loop(128, radius=0.3, center_q=[0.1, 0.2], dim=2, plane=1)
    res = poincare_invariance(hp, loop, 1.0, 1e-3)
    assert abs(res.initial + math.pi * 0.09) <= 1e-6
    assert res.drift <= 1e-6


def test_poincare_dimension_check():
    with pytest.raises(DimensionMismatch):
        poincare_invariance(ham("p1^2/2"), circle_loop(16, dim=2), 1.0, 1e-2)


def probes():
    loop = circle_loop(256)
    _, q, p = loop.points()
    return [loop], [(q[k], p[k]) for k in range(0, 256, 16)]


def test_identity_and_scaling_are_canonical():
    loops, samples = probes()
    r = canonical_check(cmap("q1", "p1"), loops, samples)
    assert (r.symplectic, r.form) == (0.0, 0.0)
    r = canonical_check(cmap("2*q1", "p1/2", "0"), loops, samples)
    assert r.symplectic <= 1e-12 and r.form <= 1e-12 and r.generating <= 1e-12


def test_rotation_is_canonical():
    loops, samples = probes()
    r = canonical_check(cmap("cos(0.3)*q1 + sin(0.3)*p1", "-sin(0.3)*q1 + cos(0.3)*p1"), loops, samples)
    assert r.symplectic <= 1e-10 and r.form <= 1e-4


def test_non_canonical_scaling():
    loops, samples = probes()
    r = canonical_check(cmap("2*q1", "p1"), loops, samples)
    assert r.symplectic == 1.0
    assert abs(r.form - math.pi) <= 1e-4


def test_generating_function_residual():
    loops, samples = probes()
    # swap Q = p, P = -q: p dq - P dQ = d(q p)
    assert canonical_check(cmap("p1", "-q1", "q1*p1"), loops, samples).generating <= 1e-14
    assert canonical_check(cmap("p1", "-q1", "q1^2"), loops, samples).generating > 0.5


def test_symplectic_form_layout():
    w = symplectic_form(2)
    assert w[0, 2] == 1.0 and w[2, 0] == -1.0
    assert np.array_equal(w, -w.T)


def test_two_dimensional_canonical_map():
    m = CanonicalMap(2, (parse("q1 + q2"), parse("q2")), (parse("p1"), parse("p2 - p1")))
    loop = circle_loop(64, dim=2, plane=1)
    _, q, p = loop.points()
    r = canonical_check(m, [loop], [(q[k], p[k]) for k in range(0, 64, 8)])
    assert r.symplectic <= 1e-14 and r.form <= 1e-12

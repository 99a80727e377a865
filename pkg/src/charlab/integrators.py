"""Fixed-step integrators on plain lists of floats.

State vectors here are short (2n+1 entries at most), where unrolled scalar
code beats both list comprehensions and numpy's per-call overhead.
"""

from functools import lru_cache


@lru_cache(maxsize=None)
def _unrolled_rk4(m):
    idx = range(m)
    y = ", ".join(f"y{i}" for i in idx)

    def stage(k, scale):
        return "[" + ", ".join(f"y{i} + {scale} * {k}[{i}]" for i in idx) + "]"

    src = [
        "def step(f, t, y, h):",
        f"    {y}, = y",
        "    half = 0.5 * h",
        "    k1 = f(t, y)",
        f"    k2 = f(t + half, {stage('k1', 'half')})",
        f"    k3 = f(t + half, {stage('k2', 'half')})",
        f"    k4 = f(t + h, {stage('k3', 'h')})",
        "    sixth = h / 6.0",
        "    return ["
        + ", ".join(f"y{i} + sixth * (k1[{i}] + 2.0 * k2[{i}] + 2.0 * k3[{i}] + k4[{i}])" for i in idx)
        + "]",
    ]
    ns = {}
    exec("\n".join(src), ns)
    return ns["step"]


def rk4_step(f, t, y, h):
    """One classical Runge-Kutta step of y' = f(t, y) for a list ``y``."""
    return _unrolled_rk4(len(y))(f, t, y, h)


def rk4_stepper(m):
    """The step function for states of length ``m`` (skips the per-call lookup)."""
    return _unrolled_rk4(m)


def step_count(length, dt):
    """Number of fixed steps covering ``length`` and the step actually used."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not length > 0:
        raise ValueError("integration length must be positive")
    n = max(1, int(round(length / dt)))
    return n, length / n


@lru_cache(maxsize=None)
def fused_rk4(outputs):
    """``advance(jet, t0, y, h, nsteps)`` for y' = (outputs evaluated on g = jet(t, *y)).

    ``outputs`` is a tuple of code strings in ``g``, one per state component,
    e.g. ``("g[2]", "-g[1]")`` for a one-degree-of-freedom Hamiltonian.  The
    loop is unrolled into locals, with the same arithmetic as :func:`rk4_step`.
    """
    m = len(outputs)
    idx = range(m)
    ys = ", ".join(f"y{i}" for i in idx)

    def stage(k, args):
        lines = [f"        g = jet({args})"]
        lines += [f"        {k}{i} = {code}" for i, code in enumerate(outputs)]
        return lines

    src = [
        "def advance(jet, t0, y, h, nsteps):",
        f"    {ys}, = y",
        "    half = 0.5 * h",
        "    sixth = h / 6.0",
        "    for k in range(nsteps):",
        "        t = t0 + k * h",
        *stage("a", f"t, {ys}"),
        *stage("b", "t + half, " + ", ".join(f"y{i} + half * a{i}" for i in idx)),
        *stage("c", "t + half, " + ", ".join(f"y{i} + half * b{i}" for i in idx)),
        *stage("d", "t + h, " + ", ".join(f"y{i} + h * c{i}" for i in idx)),
        *[f"        y{i} = y{i} + sixth * (a{i} + 2.0 * b{i} + 2.0 * c{i} + d{i})" for i in idx],
        f"    return [{ys}]",
    ]
    ns = {}
    exec("\n".join(src), ns)
    return ns["advance"]

"""Scenario files: a small line-oriented format binding a problem to settings.

A file is a sequence of ``[section]`` headers and ``key = value`` lines.
``#`` starts a comment.  Values are one of

* a double-quoted string (expressions, output paths),
* a bare word such as ``rk4`` or ``true``,
* a comma-separated list of closed constant expressions such as ``-2, sqrt(2)``.

Lines before the first header belong to ``[problem]``.  Every key is checked
against the schema for the declared kind; unknown keys, keys that belong to
another kind and missing required keys are rejected with the key name.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CharlabError, ExpressionSyntaxError, ScenarioParseError, UnknownFunction, ValidationError
from .expr import Expression, constant, parse

KINDS = ("general_pde", "evolution_hj", "hamiltonian", "lagrangian")
ALL = KINDS
MECHANICS = ("hamiltonian", "lagrangian")
PDE = ("general_pde", "evolution_hj")

DEFAULT_TOLERANCES = {
    "tol_F": 1e-8,
    "tol_closure": 1e-8,
    "tol_energy": 1e-6,
    "tol_loop": 1e-6,
    "tol_eq11": 1e-10,
    "tol_equiv": 1e-6,
    "tol_symplectic": 1e-10,
    "tol_form": 1e-4,
    "tol_crossing": 1e-2,
    "tol_jump": 1e-2,
}

_HEADER = re.compile(r"^\[([A-Za-z_][A-Za-z0-9_]*)\]$")
_ASSIGN = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")
_WORD = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class Key:
    section: str
    kinds: tuple
    type: str  # expr | str | word | bool | int | float | floats
    required: bool = False
    default: object = None


def _vars(prefix, n):
    return [f"{prefix}{i + 1}" for i in range(n)]


def schema(kind: str, n: int) -> dict:
    """Allowed keys for one kind and dimension, keyed by (section, key)."""
    keys = {
        ("problem", "kind"): Key("problem", ALL, "word", True),
        ("problem", "dim"): Key("problem", ALL, "int", True),
        ("problem", "title"): Key("problem", ALL, "str"),
        ("problem", "F"): Key("problem", ("general_pde",), "expr", True),
        ("problem", "E"): Key("problem", ("evolution_hj",), "expr", True),
        ("problem", "u0"): Key("problem", ("evolution_hj",), "expr", True),
        ("problem", "H"): Key("problem", MECHANICS, "expr", kind == "hamiltonian"),
        ("problem", "L"): Key("problem", ("lagrangian",), "expr", True),
        ("problem", "separable"): Key("problem", ("hamiltonian",), "bool", default=False),
        ("integration", "dt"): Key("integration", ALL, "float", True),
        ("integration", "t_end"): Key("integration", ("evolution_hj",) + MECHANICS, "float", True),
        ("integration", "length"): Key("integration", ("general_pde",), "float", True),
        ("integration", "t0"): Key("integration", ("evolution_hj",) + MECHANICS, "float", default=0.0),
        ("integration", "method"): Key("integration", ALL, "word", default="rk4"),
        ("seeds", "lows"): Key("seeds", ("evolution_hj",), "floats", True),
        ("seeds", "highs"): Key("seeds", ("evolution_hj",), "floats", True),
        ("seeds", "counts"): Key("seeds", ("evolution_hj",), "floats", True),
        ("seeds", "u"): Key("seeds", ("general_pde",), "floats", True),
        ("initial", "q"): Key("initial", MECHANICS, "floats", True),
        ("initial", "p"): Key("initial", ("hamiltonian",), "floats", True),
        ("initial", "qd"): Key("initial", ("lagrangian",), "floats", True),
        ("loop", "points"): Key("loop", ("hamiltonian",), "int", default=256),
        ("loop", "radius"): Key("loop", ("hamiltonian",), "float", default=1.0),
        ("loop", "center_q"): Key("loop", ("hamiltonian",), "floats"),
        ("loop", "center_p"): Key("loop", ("hamiltonian",), "floats"),
        ("loop", "plane"): Key("loop", ("hamiltonian",), "int", default=1),
        ("canonical", "W"): Key("canonical", ("hamiltonian",), "expr"),
        ("canonical", "samples"): Key("canonical", ("hamiltonian",), "int", default=16),
        ("eq11", "samples"): Key("eq11", ("lagrangian",), "int", default=100),
        ("eq11", "seed"): Key("eq11", ("lagrangian",), "int", default=0),
        ("eq11", "box"): Key("eq11", ("lagrangian",), "float", default=2.0),
        ("grid", "lows"): Key("grid", PDE, "floats"),
        ("grid", "highs"): Key("grid", PDE, "floats"),
        ("grid", "counts"): Key("grid", PDE, "floats"),
        ("grid", "u"): Key("grid", PDE, "expr"),
        ("expect", "crossing_t"): Key("expect", ("evolution_hj",), "float"),
        ("expect", "crossing_x"): Key("expect", ("evolution_hj",), "float"),
        ("expect", "jump_t"): Key("expect", ("evolution_hj",), "float"),
        ("expect", "jump"): Key("expect", ("evolution_hj",), "float"),
        ("output", "dir"): Key("output", ALL, "str"),
    }
    for name, tol in DEFAULT_TOLERANCES.items():
        keys[("tolerances", name)] = Key("tolerances", ALL, "float", default=tol)
    for v in (*_vars("x", n), *_vars("p", n)):
        keys[("seeds", v)] = Key("seeds", ("general_pde",), "floats", True)
    for v in _vars("p", n):
        keys[("grid", v)] = Key("grid", PDE, "expr")
    for v in (*_vars("Q", n), *_vars("P", n)):
        keys[("canonical", v)] = Key("canonical", ("hamiltonian",), "expr")
    return keys


def _alphabet(kind, n, section, key):
    """Variables an expression under (section, key) may mention."""
    x, p = _vars("x", n), _vars("p", n)
    q, qd = _vars("q", n), _vars("qd", n)
    if section == "problem":
        return {
            "F": [*x, "u", *p],
            "E": ["t", *x, *p],
            "u0": x,
            "H": ["t", *q, *p],
            "L": ["t", *q, *qd],
        }[key]
    if section == "canonical":
        return [*q, *p]
    return x  # grid fields


@dataclass
class ProblemSpec:
    """Validated scenario.  ``values`` maps (section, key) to parsed values,
    defaults included; expressions are already parsed."""

    kind: str
    dim: int
    values: dict
    source: str = "<string>"
    sections: set = field(default_factory=set)

    def get(self, section, key, default=None):
        return self.values.get((section, key), default)

    def expr(self, key, section="problem") -> Expression | None:
        return self.values.get((section, key))

    @property
    def title(self) -> str:
        return self.get("problem", "title") or Path(self.source).stem

    @property
    def dt(self) -> float:
        return self.get("integration", "dt")

    @property
    def t_end(self) -> float:
        key = "length" if self.kind == "general_pde" else "t_end"
        return self.get("integration", key)

    @property
    def method(self) -> str:
        return self.get("integration", "method")

    @property
    def tolerances(self) -> dict:
        return {name: self.get("tolerances", name) for name in DEFAULT_TOLERANCES}

    def has(self, section) -> bool:
        return section in self.sections

    def override(self, dt=None, t_end=None) -> "ProblemSpec":
        values = dict(self.values)
        if dt is not None:
            if not dt > 0:
                raise ValidationError("dt must be positive", "dt")
            values[("integration", "dt")] = float(dt)
        if t_end is not None:
            key = "length" if self.kind == "general_pde" else "t_end"
            if not t_end > 0:
                raise ValidationError(f"{key} must be positive", key)
            values[("integration", key)] = float(t_end)
        return ProblemSpec(self.kind, self.dim, values, self.source, set(self.sections))


def _split_list(text, line):
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(text[start:i])
            start = i + 1
    parts.append(text[start:])
    parts = [s.strip() for s in parts]
    if any(not s for s in parts):
        raise ScenarioParseError("empty list element", line)
    return parts


def _strip_comment(raw):
    out, quoted = [], False
    for ch in raw:
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out).strip()


def _raw_value(text, line):
    """('str', s) | ('word', w) | ('list', [float])."""
    if text.startswith('"'):
        if len(text) < 2 or not text.endswith('"') or '"' in text[1:-1]:
            raise ScenarioParseError("unterminated or malformed string", line)
        return "str", text[1:-1]
    if not text:
        raise ScenarioParseError("missing value", line)
    if _WORD.match(text):
        return "word", text
    values = []
    for part in _split_list(text, line):
        try:
            values.append(constant(part))
        except CharlabError as err:
            raise ScenarioParseError(f"bad constant {part!r}: {err}", line) from err
    return "list", values


def parse_sections(text: str) -> tuple:
    """File syntax only: returns ({(section, key): (type, value, line)}, sections)."""
    entries, sections = {}, set()
    section = "problem"
    for number, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            section = m.group(1)
            sections.add(section)
            continue
        m = _ASSIGN.match(line)
        if not m:
            raise ScenarioParseError(f"expected '[section]' or 'key = value', got {line!r}", number)
        key = (section, m.group(1))
        if key in entries:
            raise ScenarioParseError(f"duplicate key {m.group(1)!r} in [{section}]", number)
        entries[key] = (*_raw_value(m.group(2).strip(), number), number)
        sections.add(section)
    return entries, sections


def _coerce(key: Key, name, kind_, value):
    if key.type in ("expr", "str"):
        if kind_ != "str":
            raise ValidationError(f"{name} must be a double-quoted string", name)
        return value
    if key.type == "word":
        if kind_ != "word":
            raise ValidationError(f"{name} must be a bare word", name)
        return value
    if key.type == "bool":
        if kind_ != "word" or value not in ("true", "false"):
            raise ValidationError(f"{name} must be true or false", name)
        return value == "true"
    if kind_ != "list":
        raise ValidationError(f"{name} must be numeric", name)
    if key.type == "floats":
        return [float(v) for v in value]
    if len(value) != 1:
        raise ValidationError(f"{name} takes a single number", name)
    if key.type == "int":
        if value[0] != int(value[0]):
            raise ValidationError(f"{name} must be an integer", name)
        return int(value[0])
    return float(value[0])


def _parse_expression(name, text, allowed):
    try:
        e = parse(text)
    except (ExpressionSyntaxError, UnknownFunction) as err:
        err.key = name
        err.args = (f"{name}: {err}",)
        raise
    stray = [v for v in e.free_vars if v not in allowed]
    if stray:
        raise ValidationError(f"{name} mentions {stray[0]!r}, allowed variables are {', '.join(allowed)}", name)
    return e


def _check_header(entries):
    if ("problem", "kind") not in entries:
        raise ValidationError("missing required key kind", "kind")
    kind_, kind, _ = entries[("problem", "kind")]
    if kind_ != "word" or kind not in KINDS:
        raise ValidationError(f"kind must be one of {', '.join(KINDS)}", "kind")
    if ("problem", "dim") not in entries:
        raise ValidationError("missing required key dim", "dim")
    kind_, dim, _ = entries[("problem", "dim")]
    if kind_ != "list" or len(dim) != 1 or dim[0] != int(dim[0]) or dim[0] < 1:
        raise ValidationError("dim must be a positive integer", "dim")
    return kind, int(dim[0])


def validate(entries: dict, sections: set, source="<string>") -> ProblemSpec:
    kind, n = _check_header(entries)
    allowed = schema(kind, n)
    any_kind = {}
    for k in KINDS:
        any_kind.update(schema(k, n))
    values = {}
    for (section, name), (kind_, value, _) in entries.items():
        key = allowed.get((section, name))
        if key is None or kind not in key.kinds:
            if (section, name) in any_kind:
                raise ValidationError(f"key {name} is not valid for kind {kind}", name)
            raise ValidationError(f"unknown key {name} in [{section}]", name)
        v = _coerce(key, name, kind_, value)
        if key.type == "expr":
            v = _parse_expression(name, v, _alphabet(kind, n, section, name))
        values[(section, name)] = v
    for sk, key in allowed.items():
        if kind not in key.kinds:
            continue
        if sk in values:
            continue
        # optional sections only require their keys when present
        if key.required and (sk[0] in ("problem", "integration", "seeds", "initial") or sk[0] in sections):
            raise ValidationError(f"missing required key {sk[1]}", sk[1])
        if key.default is not None:
            values[sk] = key.default
    spec = ProblemSpec(kind, n, values, source, set(sections))
    _check_values(spec)
    return spec


def _need_len(spec, section, name, size):
    v = spec.get(section, name)
    if v is not None and len(v) != size:
        raise ValidationError(f"{name} needs {size} values, got {len(v)}", name)


def _check_values(spec: ProblemSpec):
    n, kind = spec.dim, spec.kind
    if not spec.dt > 0:
        raise ValidationError("dt must be positive", "dt")
    horizon = "length" if kind == "general_pde" else "t_end"
    if not spec.t_end > 0:
        raise ValidationError(f"{horizon} must be positive", horizon)
    if spec.method not in ("rk4", "verlet"):
        raise ValidationError("method must be rk4 or verlet", "method")
    if spec.method == "verlet" and not (kind == "hamiltonian" and spec.get("problem", "separable")):
        raise ValidationError("method verlet needs a hamiltonian declared separable = true", "method")
    for name, tol in spec.tolerances.items():
        if not tol > 0:
            raise ValidationError(f"{name} must be positive", name)
    if kind == "general_pde":
        names = [*_vars("x", n), "u", *_vars("p", n)]
        sizes = {len(spec.get("seeds", v)) for v in names}
        if len(sizes) != 1:
            raise ValidationError("seed lists x, u, p must all have the same length", names[0])
    if kind == "evolution_hj":
        for name in ("lows", "highs", "counts"):
            _need_len(spec, "seeds", name, n)
        counts = spec.get("seeds", "counts")
        if any(c != int(c) or c < 1 for c in counts):
            raise ValidationError("seed count must be a positive integer", "counts")
    if kind in MECHANICS:
        _need_len(spec, "initial", "q", n)
        _need_len(spec, "initial", "p", n)
        _need_len(spec, "initial", "qd", n)
    if spec.has("grid"):
        for name in ("lows", "highs", "counts"):
            if spec.get("grid", name) is None:
                raise ValidationError(f"missing required key {name}", name)
            _need_len(spec, "grid", name, n)
        p_keys = [spec.get("grid", v) for v in _vars("p", n)]
        has_p = any(e is not None for e in p_keys)
        if has_p and not all(e is not None for e in p_keys):
            raise ValidationError("grid needs all of p1..pn or none", "p1")
        if has_p == (spec.get("grid", "u") is not None):
            raise ValidationError("grid needs exactly one of u or p1..pn", "u")
    if spec.has("loop"):
        if spec.get("loop", "points") < 1:
            raise ValidationError("points must be at least 1", "points")
        if not 1 <= spec.get("loop", "plane") <= n:
            raise ValidationError(f"plane must be between 1 and {n}", "plane")
        _need_len(spec, "loop", "center_q", n)
        _need_len(spec, "loop", "center_p", n)
    if spec.has("canonical"):
        for v in (*_vars("Q", n), *_vars("P", n)):
            if spec.get("canonical", v) is None:
                raise ValidationError(f"missing required key {v}", v)
    for section, name in (("canonical", "samples"), ("eq11", "samples")):
        if spec.has(section) and spec.get(section, name) < 1:
            raise ValidationError(f"{name} must be at least 1", name)


def loads(text: str, source="<string>") -> ProblemSpec:
    entries, sections = parse_sections(text)
    return validate(entries, sections, source)


def load_spec(path) -> ProblemSpec:
    path = Path(path)
    return loads(path.read_text(encoding="utf-8"), str(path))

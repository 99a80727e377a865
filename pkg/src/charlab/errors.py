"""Exception hierarchy shared by all charlab modules."""


class CharlabError(Exception):
    """Base class for every error raised by charlab."""


class ExpressionSyntaxError(CharlabError, ValueError):
    """Malformed expression text.

    ``offset`` is the byte offset (UTF-8) of the offending token and
    ``expected`` a short description of what the parser wanted there.
    """

    def __init__(self, text, offset, expected):
        self.text = text
        self.offset = offset
        self.expected = expected
        super().__init__(f"syntax error at offset {offset}: expected {expected}")


class UnknownFunction(CharlabError, ValueError):
    def __init__(self, name, offset):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown function {name!r} at offset {offset}")


class DomainError(CharlabError, ArithmeticError):
    """Evaluation left a function's domain; ``subexpr`` names the culprit."""

    def __init__(self, subexpr, reason):
        self.subexpr = subexpr
        self.reason = reason
        super().__init__(f"{reason} in {subexpr}")


class UnboundVariable(CharlabError, KeyError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"no binding for variable {name!r}")

    def __str__(self):
        return self.args[0]


class TooFewSamples(CharlabError, ValueError):
    pass


class LoopNotClosed(CharlabError, ValueError):
    pass


class DimensionMismatch(CharlabError, ValueError):
    pass


class InitialJetOffManifold(CharlabError, ValueError):
    def __init__(self, residual):
        self.residual = residual
        super().__init__(f"initial jet is off the solution manifold: |F| = {residual:.3e}")


class StepFailure(CharlabError, RuntimeError):
    """Integration stopped early; ``strip`` holds everything up to the last good sample."""

    def __init__(self, reason, strip=None):
        self.reason = reason
        self.strip = strip
        super().__init__(reason)


class EmptySeeds(CharlabError, ValueError):
    pass


class OutOfRange(CharlabError, ValueError):
    pass


class SingularHessian(CharlabError, ArithmeticError):
    def __init__(self, condition):
        self.condition = condition
        super().__init__(f"velocity Hessian is singular (condition estimate {condition:.3e})")


class NoConvergence(CharlabError, ArithmeticError):
    pass


class SeparabilityNotDeclared(CharlabError, ValueError):
    pass


class GridTooSmall(CharlabError, ValueError):
    pass


class ScenarioParseError(CharlabError, ValueError):
    def __init__(self, message, line):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ValidationError(CharlabError, ValueError):
    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message)


class RunFailure(CharlabError, RuntimeError):
    """A module error raised while running a scenario, tagged with the key that triggered it."""

    def __init__(self, key, error):
        self.key = key
        self.error = error
        super().__init__(f"{key}: {type(error).__name__}: {error}")

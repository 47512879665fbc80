"""Exception hierarchy shared by every layer of the engine."""


class EngineError(Exception):
    """Base class for all errors raised by the symbolic engine."""


class UnknownSymbolError(EngineError):
    """A dependent-variable or generator name outside the frame alphabets."""


class FrameMismatchError(EngineError):
    """Two expressions (or an expression and a variable) from different frames."""


class DivisionByZeroError(EngineError):
    """Division by an expression whose canonical form is zero."""


class ExponentOverflowError(EngineError):
    """A monomial exponent left the range supported by the packed encoding."""


class EvolutionRuleError(EngineError):
    """A time derivative was requested for a jet with no evolution rule."""


class NonlocalObstructionError(EngineError):
    """A formal antiderivative atom whose argument does not vanish where required."""


class OperatorError(EngineError):
    """Unsupported operator-algebra manipulation (e.g. composing two inverse powers)."""


class CertificateError(EngineError):
    """A field sample violates the positivity certificate."""


class NearSingularSampleError(EngineError):
    """A denominator nearly vanishes on the sample grid; reseed and retry."""


class ParseError(EngineError):
    """Syntax or semantic error in the expression language."""

    def __init__(self, message, line, column):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column

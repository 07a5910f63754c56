"""Exception and warning types raised across the package."""


class SymsdeError(Exception):
    """Base class for all package errors."""


class ExprSyntaxError(SymsdeError, ValueError):
    def __init__(self, message, position, expected=()):
        self.position = position
        self.expected = tuple(sorted(expected))
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at position {position}{detail}")


class UnknownIdentifier(SymsdeError, ValueError):
    def __init__(self, name, position):
        self.name = name
        self.position = position
        super().__init__(f"unknown identifier {name!r} at position {position}")


class DomainError(SymsdeError, ValueError):
    """Evaluation left the domain of ln, sqrt, division or a fractional power."""

    def __init__(self, message, expr=None, component=None):
        self.expr = expr
        self.component = component
        where = f" in component {component}" if component is not None else ""
        sub = f" [sub-expression: {expr}]" if expr is not None else ""
        super().__init__(f"{message}{where}{sub}")

    def at_component(self, component):
        return DomainError(str(self).split(" [sub-expression")[0], self.expr, component)


class ShapeError(SymsdeError, ValueError):
    pass


class VarError(SymsdeError, ValueError):
    pass


class VarMismatch(VarError):
    pass


class TransformationError(SymsdeError, ValueError):
    pass


class NonInvertiblePhi(TransformationError):
    pass


class SymmetryError(SymsdeError, ValueError):
    pass


class FlowEscapedBox(SymsdeError, RuntimeError):
    pass


class StepSizeUnderflow(SymsdeError, RuntimeError):
    pass


class NumericalBlowup(SymsdeError, RuntimeError):
    def __init__(self, message, path=None, step=None):
        self.path = path
        self.step = step
        super().__init__(f"{message} (path={path}, step={step})")


class TimeOutOfRange(SymsdeError, ValueError):
    pass


class ParameterError(SymsdeError, ValueError):
    pass


class ConfigError(SymsdeError, ValueError):
    def __init__(self, message, pointer=""):
        self.pointer = pointer
        super().__init__(f"{message} (at {pointer or '/'})")


class MomentDiagnosticWarning(UserWarning):
    pass


class UnboundedFunctionalWarning(UserWarning):
    pass

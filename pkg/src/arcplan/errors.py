"""Exception hierarchy shared by all arcplan modules."""


class ArcPlanError(Exception):
    """Base class for every error raised by arcplan."""


class ContractError(ArcPlanError, ValueError):
    """A caller violated a documented precondition."""


class ParseError(ArcPlanError):
    """Malformed input file (PGM, parameter or scenario file)."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(ArcPlanError):
    """A state became non-finite during integration or rollout."""


class SolverFailure(ArcPlanError):
    """The implicit step solver did not converge."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class StiffnessError(ArcPlanError):
    """Adaptive step size collapsed below the allowed minimum."""


class PoleError(ArcPlanError, ZeroDivisionError):
    """Amplification factor evaluated at a pole of an implicit scheme."""


class NoPathError(ArcPlanError):
    """The planner exhausted its budget without reaching the goal region."""

    def __init__(self, message, tree=None, expansions=0):
        super().__init__(message)
        self.tree = tree
        self.expansions = expansions


class InfeasibleError(ArcPlanError):
    """The goal connector found no point satisfying the constraints."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = violations

class ParameterError(ValueError):
    """Market or preference parameters outside the admissible open region."""


class DomainError(ValueError):
    """Argument outside the domain of a closed form or policy map."""


class NoRetirementError(DomainError):
    """Raised where a retirement boundary is required but the agent never retires."""

class DomainError(ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class ConstructionError(ValueError):
    """A schedule or drift definition violates its structural conditions."""


class UnsupportedOperation(TypeError):
    """The operation needs a structural property the object does not declare."""

"""Exception hierarchy shared by the package."""


class MeshError(ValueError):
    """Invalid or unsupported mesh input."""


class MeshParseError(MeshError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ConformityError(MeshError):
    """Tetrahedra do not form a conforming, connected partition."""


class DegenerateElementError(MeshError):
    def __init__(self, index, volume):
        super().__init__(f"tetrahedron {index} is degenerate (volume {volume:.3e})")
        self.index = index


class EmbeddingError(MeshError):
    """Inner and outer meshes/spaces do not match."""


class EmptyInteriorError(ValueError):
    """The finite element space has no interior degrees of freedom."""


class SolverError(RuntimeError):
    """Numerical failure inside a linear solver."""


class NotSPDError(SolverError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message, x=None, stats=None, column=None):
        super().__init__(message)
        self.x = x
        self.stats = stats
        self.column = column


class SingularMatrixError(SolverError):
    pass

"""Exception hierarchy.

``DataError`` subclasses signal invalid input data (CLI exit code 3);
``NumericalError`` subclasses signal numerical failure (exit code 4).
"""


class GManifoldError(Exception):
    pass


class DataError(GManifoldError, ValueError):
    pass


class NumericalError(GManifoldError, ArithmeticError):
    pass


class GroupMismatch(DataError):
    pass


class UnsupportedGroup(DataError):
    pass


class GraphFormatError(DataError):
    pass


class IsolatedNode(DataError):
    def __init__(self, node):
        self.node = int(node)
        super().__init__(f"node {self.node} has no incident edges (degree 0)")


class ZeroRowSum(DataError):
    def __init__(self, row):
        self.row = int(row)
        super().__init__(f"affinity row {self.row} sums to zero")


class RankDeficientBlock(NumericalError):
    def __init__(self, node, sigma_min):
        self.node = int(node)
        self.sigma_min = float(sigma_min)
        super().__init__(
            f"embedding block of node {self.node} is rank deficient "
            f"(smallest singular value {self.sigma_min:.3e})"
        )


class ConvergenceError(NumericalError):
    def __init__(self, message, residual):
        self.residual = float(residual)
        super().__init__(f"{message} (achieved residual {self.residual:.3e})")

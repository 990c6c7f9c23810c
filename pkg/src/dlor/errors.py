"""Exception types raised by the numerical routines.

Every error derives from :class:`DlorError`; the CLI maps those to exit code 2.
"""


class DlorError(Exception):
    """Base class for numerical failures."""


class ConvergenceError(DlorError):
    def __init__(self, sweeps, off_norm):
        super().__init__(f"Jacobi SVD did not converge after {sweeps} sweeps (off-diagonal {off_norm:.3e})")
        self.sweeps = sweeps
        self.off_norm = off_norm


class SingularMatrix(DlorError):
    def __init__(self, pivot, threshold):
        super().__init__(f"matrix is singular to tolerance: pivot {pivot:.3e} <= {threshold:.3e}")
        self.pivot = pivot
        self.threshold = threshold


class NonDifferentiablePoint(DlorError):
    pass


class NoExpansionPoint(DlorError):
    pass


class ProjectionDegenerate(DlorError):
    pass


class EvaluationMatrixSingular(DlorError):
    def __init__(self, best_cond):
        super().__init__(f"no invertible evaluation matrix found; best condition number {best_cond:.3e}")
        self.best_cond = best_cond


class BetaDegenerate(DlorError):
    pass


class SingularInput(DlorError):
    pass


class BasisSearchFailed(DlorError):
    def __init__(self, k, conds):
        super().__init__(f"no admissible basis found; block {k} condition numbers {conds}")
        self.k = k
        self.conds = conds


class PartialProductSingular(DlorError):
    def __init__(self, k):
        super().__init__(f"partial product P_{k} is singular")
        self.k = k


class DivergedAt(DlorError):
    def __init__(self, epoch, partial=None):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch
        self.partial = partial

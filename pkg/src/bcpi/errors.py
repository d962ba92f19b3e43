"""Exception and warning types shared across the package."""


class BcpiError(Exception):
    """Base class for all errors raised by this package."""


class OverlappingGroups(BcpiError):
    """Two groups claim the same column index."""


class IndexOutOfRange(BcpiError):
    """A group references a column index outside the design matrix."""


class EmptyGroup(BcpiError):
    """A group contains no column indices."""


class NotPositiveSemidefinite(BcpiError):
    """The requested covariance matrix is not positive semidefinite."""


class ZeroSignal(BcpiError):
    """SNR-based noise scaling was requested but the signal vector is zero."""


class NonFiniteLoss(BcpiError):
    """Training or loss evaluation produced a non-finite value."""


class DegenerateOutcome(BcpiError):
    """The outcome vector carries no information to fit (e.g. one class)."""


class ShapeMismatch(BcpiError):
    """Input dimensions do not match what the fitted object expects."""


class EmptyConditioningSet(BcpiError):
    """A conditional model has nothing to condition on (single all-covering group)."""


class DegenerateTruth(BcpiError):
    """A ranking metric needs both important and null groups."""


class NoNullGroups(BcpiError):
    """Type-I error is undefined without at least one null group."""


class NoSignalGroups(BcpiError):
    """Power is undefined without at least one important group."""


class MalformedMetrics(BcpiError):
    """A metrics file could not be parsed into benchmark rows."""


class UsageError(BcpiError):
    """Bad command-line invocation; message names the offending flag."""


class DegenerateVarianceWarning(UserWarning):
    """Loss deltas were constant; the Wald statistic is undefined."""


class SingularDesignWarning(UserWarning):
    """A group's columns are collinear; its least-squares test is skipped."""

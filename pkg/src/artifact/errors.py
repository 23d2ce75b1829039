"""Exception types raised across the package."""


class ArtifactError(Exception):
    """Base class for every error raised by this package."""


class SpecError(ArtifactError, ValueError):
    """A model specification violates its invariants."""


class DomainError(ArtifactError, ValueError):
    """An argument lies outside the domain of a formula."""


class Degenerate(ArtifactError):
    """The replica threshold interval is empty (p0 == p1)."""


class IndependentDatabases(ArtifactError):
    """No symbol remapping separates matched from unmatched columns."""


class UnequalRowLengths(ArtifactError):
    """A ragged database was used where a rectangular one is required."""


class NoSeeds(ArtifactError):
    """Seeded deletion detection was requested without seeds."""


class DuplicateHistograms(ArtifactError):
    """Two columns of the reference database share a histogram."""


class InstanceTooLarge(ArtifactError):
    """An exhaustive enumeration would exceed its budget."""


class SMaxTooLarge(InstanceTooLarge):
    """The replica enumeration |X|^s_max exceeds its cap."""


class BudgetExceeded(ArtifactError):
    """An adversarial deletion set is larger than the budget allows."""


class NonUniformAsymptote(ArtifactError):
    """The histogram collision asymptote only covers uniform sources."""

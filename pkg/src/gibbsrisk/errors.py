"""Exception types shared across the package."""


class GibbsriskError(Exception):
    """Base class for all errors raised by this package."""


class EmptySupport(GibbsriskError):
    """A measure has no atom with positive mass."""


class DimensionMismatch(GibbsriskError):
    """Atom locations, pattern vectors, or weight vectors disagree in shape."""


class BudgetExceeded(GibbsriskError):
    """A grid or enumeration would exceed its configured size budget."""


class NegativeDensity(GibbsriskError):
    """A density evaluated to a negative value during quadrature."""


class BaseMismatch(GibbsriskError):
    """Two measures or tables do not live on the same atom set."""


class NonFiniteLoss(GibbsriskError):
    """A loss evaluation produced NaN or infinity."""


class NonConvergence(GibbsriskError):
    """An iterative search exhausted its iteration budget."""


class InvalidC(GibbsriskError):
    """The radius of a divergence-ball constraint is not positive."""


class ConfigError(GibbsriskError):
    """An experiment configuration failed validation.

    Carries the path of the offending field so the CLI can point at it.
    """

    def __init__(self, message: str, field: str = ""):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)

"""Exception types shared across the package."""


class QCDError(Exception):
    """Base class for all package errors."""


class DegeneratePrior(QCDError):
    """Survival probability P(nu >= n) vanished where it is needed as a divisor."""


class InvalidIndex(QCDError):
    """Observation index outside the available history."""


class InvalidBudget(QCDError):
    """False-alarm budget cannot be met by the requested procedure."""


class InvalidModel(QCDError):
    """Model or prior parameters violate construction constraints."""


class CensoringExceeded(QCDError):
    """Too many Monte Carlo trials reached the horizon without stopping."""


class NoSurvivors(QCDError):
    """Every trial raised a false alarm; conditional delay is undefined."""


class DegenerateFit(QCDError):
    """Regression on log-scale estimates hit a zero estimate."""


class ConfigError(QCDError):
    """Experiment config failed to parse or validate."""

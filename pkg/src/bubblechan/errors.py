"""Exception types shared across the package."""


class BubblechanError(Exception):
    """Base class for all package errors."""


class ConfigError(BubblechanError):
    """Invalid configuration or scenario.

    Collects every violated field so a user can fix a config in one pass.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(BubblechanError):
    """Malformed or inconsistent external data (measured series, profiles)."""


class NumericsError(BubblechanError):
    """Numerical failure: non-finite state, non-convergence."""


class UsageError(BubblechanError):
    """An operation was called outside its contract (API misuse)."""

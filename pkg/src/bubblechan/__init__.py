"""Microbubble transport and molecular-communication link simulator for
recirculating laminar pipe flow."""

__version__ = "0.1.0"

from . import bubbledyn, commlink, config, fluidmodel, studies, transport  # noqa: E402,F401
from .errors import (  # noqa: F401
    BubblechanError,
    ConfigError,
    DataError,
    NumericsError,
    UsageError,
)

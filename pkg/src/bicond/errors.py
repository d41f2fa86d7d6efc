"""Error types shared by all modules.

Errors deriving from :class:`ValidationError` signal bad input (the command
line maps them to exit code 1); the others are runtime failures (exit code 2).
Every class carries a stable short ``code`` used in diagnostics.
"""
from __future__ import annotations


class BicondError(Exception):
    code = "runtime"


class ValidationError(BicondError, ValueError):
    code = "validation"


class InvalidWeights(ValidationError):
    code = "invalid-weights"


class OutOfRange(ValidationError):
    code = "out-of-range"


class AmbiguousRegime(ValidationError):
    code = "ambiguous-regime"


class MissingAnalyticData(ValidationError):
    code = "missing-analytic-data"


class IncompatibleEndpoint(ValidationError):
    code = "incompatible-endpoint"


class LengthMismatch(ValidationError):
    code = "length-mismatch"


class InvalidExcursion(ValidationError):
    code = "invalid-excursion"


class MalformedLabelling(ValidationError):
    code = "malformed-labelling"


class DomainError(ValidationError):
    code = "domain"


class ConfigError(ValidationError):
    code = "config"


class DivergentSeries(BicondError):
    code = "divergent-series"


class InfiniteValue(BicondError):
    code = "infinite"


class CapTooSmall(BicondError):
    code = "cap-too-small"


class MaxTriesExceeded(BicondError):
    code = "max-tries"


class DegenerateFit(BicondError):
    code = "degenerate-fit"

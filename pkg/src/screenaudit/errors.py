"""Exception taxonomy shared across the toolkit.

Every error carries a stable machine-readable ``code`` so the service layer
and CLI can map failures to structured responses and exit codes without
string-matching messages.
"""

from __future__ import annotations

from typing import Any


class AuditError(Exception):
    """Base class; ``code`` identifies the failure, ``details`` carries context."""

    code = "AUDIT_ERROR"

    def __init__(self, message: str, *, code: str | None = None, **details: Any):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.details = details

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        base = super().__str__()
        return f"[{self.code}] {base}"


class ConfigError(AuditError):
    code = "CONFIG_ERROR"


class RedactionError(AuditError):
    """Codes: EMPTY_RULESET, OVERLAPPING_SPANS, REDACTION_LEAK."""

    code = "REDACTION_ERROR"


class PlaceholderError(AuditError):
    """Codes: UNRESOLVED_PLACEHOLDER, PLACEHOLDER_LEAK, PLACEHOLDER_LOG_MISMATCH."""

    code = "PLACEHOLDER_ERROR"


class CatalogError(AuditError):
    """Codes: DIMENSION_MISMATCH, INSUFFICIENT_CANDIDATES."""

    code = "CATALOG_ERROR"


class ProviderError(AuditError):
    """Codes: AUTH_FAILED, EXHAUSTED_RETRIES, MALFORMED_RESPONSE."""

    code = "PROVIDER_ERROR"


class RatingParseError(AuditError):
    """Codes: MISSING_FIELD, OUT_OF_RANGE, AMBIGUOUS."""

    code = "PARSE_ERROR"


class StatsError(AuditError):
    """Codes: EMPTY_GROUP, ZERO_REFERENCE_RATE, DEGENERATE, RANK_DEFICIENT,
    TOO_FEW_CLUSTERS, ZERO_VARIANCE, NONCONVERGENCE, SINGLE_CLASS,
    FOLD_SINGLE_CLASS."""

    code = "STATS_ERROR"


class ExperimentError(AuditError):
    """Codes: MISSING_OBSERVED_DEMOGRAPHICS."""

    code = "EXPERIMENT_ERROR"

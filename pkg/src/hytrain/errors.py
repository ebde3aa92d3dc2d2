"""Exception types shared across the package.

Every error raised on a user-facing path derives from :class:`HytrainError`
so the command line layer can map failures onto distinct exit codes without
string matching.
"""

from __future__ import annotations


class HytrainError(Exception):
    """Base class for all package errors."""


class TrackFormatError(HytrainError):
    """Malformed or inconsistent track description (bad syntax, bad values)."""


class ComponentError(HytrainError):
    """Malformed component file or physically inconsistent component data."""


class ConfigError(HytrainError):
    """Malformed run configuration (unknown keys, missing fields, bad types)."""


class SchemaError(HytrainError):
    """An artifact on disk does not match the expected schema."""


class FitError(HytrainError):
    """Surrogate fitting failed structurally (e.g. rank-deficient samples)."""


class FitQualityError(FitError):
    """Surrogate fit succeeded but its error exceeds the configured ceiling."""


class InfeasibleError(HytrainError):
    """The requested journey is provably or numerically infeasible."""


class SolverError(HytrainError):
    """The conic solver failed to converge to an acceptable certificate."""


class SpeedCollapseError(HytrainError):
    """Forward simulation drove the speed to zero on a running interval."""


class DpInfeasibleError(HytrainError):
    """The dynamic-programming search found no feasible grid path."""

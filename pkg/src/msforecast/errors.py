"""Exception hierarchy shared across the package."""


class ForecastError(Exception):
    """Base class for all package errors."""


class TransformError(ForecastError):
    """Projective transform hit a degenerate homogeneous coordinate."""


class DomainError(ForecastError):
    """Input lies outside the domain an operation accepts."""


class DecodeError(ForecastError):
    """A heatmap could not be decoded to a location."""


class GenerationError(ForecastError):
    """Procedural environment generation failed its constraints."""


class StuckError(ForecastError):
    """Simulated agent stopped making progress."""


class ConfigError(ForecastError):
    """Inconsistent configuration or mismatched shapes."""


class StateError(ForecastError):
    """Model or checkpoint state is missing or incompatible."""


class TrainingFault(ForecastError):
    """Numerical failure during training (NaN losses or latents)."""

    def __init__(self, message, stage=None, batch_index=None):
        super().__init__(message)
        self.stage = stage
        self.batch_index = batch_index

    def __str__(self):
        parts = [super().__str__()]
        if self.stage is not None:
            parts.append(f"stage={self.stage}")
        if self.batch_index is not None:
            parts.append(f"batch={self.batch_index}")
        return " ".join(parts)


class ParseError(ForecastError):
    """Malformed dataset record."""


class DegenerateStatisticError(ForecastError):
    """A test statistic is undefined for the given input."""


class InsufficientDataError(ForecastError):
    """Not enough observations for the requested analysis."""

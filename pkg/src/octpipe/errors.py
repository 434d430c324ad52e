"""Exception types shared across the pipeline."""


class FormatError(Exception):
    """A file does not conform to the expected on-disk format."""


class ValidationError(ValueError):
    """Loaded or computed data violates a contract (value alphabet, simplex sums, ...)."""


class CoverageError(RuntimeError):
    """A stitched output voxel was not covered by any patch."""


class StageError(RuntimeError):
    """A pipeline stage failed for a specific volume."""

    def __init__(self, stage: str, volume_id: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed for volume '{volume_id}': {cause}")
        self.stage = stage
        self.volume_id = volume_id
        self.cause = cause


class ConfigError(Exception):
    """The run configuration is unreadable or inconsistent (a usage error)."""

"""Exception types shared across the pipeline.

The CLI maps ValidationError to exit code 1 (bad inputs or config, nothing
ran) and StageError to exit code 2 (a pipeline stage started and failed).
"""


class AgbmapError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(AgbmapError):
    """Invalid input file, config value, or argument; raised before work starts."""


class AlignmentError(AgbmapError):
    """Raster grids that must share a geotransform do not."""


class FitError(AgbmapError):
    """A model fit cannot proceed (too few points, degenerate data)."""


class StageError(AgbmapError):
    """A pipeline stage failed after starting; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage

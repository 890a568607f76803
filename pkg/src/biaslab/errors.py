"""Exception types shared across the package."""

import numpy as np


class DimensionError(ValueError):
    """Matrix shapes are inconsistent."""


class DomainError(ValueError):
    """An argument lies outside its allowed range."""


class InnovationVarianceError(FloatingPointError):
    """A predicted measurement variance fell to or below the numerical floor."""


class RankDeficiencyError(np.linalg.LinAlgError):
    """Normal equations are singular; ``null_direction`` spans the unidentified part."""

    def __init__(self, message, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction

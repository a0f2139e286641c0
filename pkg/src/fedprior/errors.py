"""Exception types shared across the toolkit.

Every error carries a short kebab-case ``name`` that the CLI prints on
stderr and maps to its exit code.
"""


class ToolkitError(Exception):
    """Base class for all package errors."""

    name = "error"


class ShapeError(ToolkitError):
    name = "shape-error"


class InvalidRateError(ToolkitError):
    name = "invalid-rate"


class InfeasibleMaskError(ToolkitError):
    name = "infeasible-mask"


class InvalidArgumentError(ToolkitError):
    name = "invalid-argument"


class IncompatibleModelsError(ToolkitError):
    name = "incompatible-models"


class DivergedTrainingError(ToolkitError):
    name = "diverged-training"

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class DivergedInferenceError(ToolkitError):
    name = "diverged-inference"

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class FailedSiteError(ToolkitError):
    name = "failed-site"

    def __init__(self, message, site_id=None, round_index=None):
        super().__init__(message)
        self.site_id = site_id
        self.round_index = round_index


class NotFoundError(ToolkitError):
    name = "not-found"


class EmptyInputError(ToolkitError):
    name = "empty-input"

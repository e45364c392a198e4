"""Exception types shared across the package."""


class LesionSegError(Exception):
    """Base class for all toolkit errors."""


# --- file formats ---

class BadMagicError(LesionSegError):
    pass


class UnsupportedDatatypeError(LesionSegError):
    pass


class CorruptHeaderError(LesionSegError):
    pass


class ShortReadError(LesionSegError):
    pass


class LossyWriteError(LesionSegError):
    """Refused to silently quantize non-integral data into an integer datatype."""


class CheckpointFormatError(LesionSegError):
    pass


# --- geometry ---

class CropTooLargeError(LesionSegError):
    pass


class WindowMismatchError(LesionSegError):
    pass


class PatchTooLargeError(LesionSegError):
    pass


class ExtentMismatchError(LesionSegError):
    pass


# --- autodiff / model ---

class ShapeMismatchError(LesionSegError):
    pass


class EmptyOutputError(LesionSegError):
    pass


class IndivisibleGroupsError(LesionSegError):
    pass


class DetachedLossError(LesionSegError):
    pass


class InvalidConfigError(LesionSegError):
    pass


class ArchMismatchError(LesionSegError):
    pass


# --- training ---

class NonFiniteGradientError(LesionSegError):
    pass


class NonFiniteLossError(LesionSegError):
    pass


class EmptyTrainSplitError(LesionSegError):
    pass


class EmptyDevSplitError(LesionSegError):
    pass


class StageOrderViolationError(LesionSegError):
    pass


# --- statistics ---

class AllNonFiniteError(LesionSegError):
    pass


class TooFewScansError(LesionSegError):
    pass


class DegenerateXError(LesionSegError):
    pass


class EmptyInputError(LesionSegError):
    pass


# --- synthetic data ---

class LesionDoesNotFitError(LesionSegError):
    pass

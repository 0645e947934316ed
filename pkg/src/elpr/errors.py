"""Exception hierarchy shared across the package."""


class ElprError(Exception):
    """Base class for every error raised deliberately by this package."""


class ShapeMismatch(ElprError, ValueError):
    pass


class NonFiniteError(ElprError, ArithmeticError):
    pass


# text_forge
class EmptyGlyph(ElprError, ValueError):
    pass


class RangeError(ElprError, ValueError):
    pass


class SlotOverflow(ElprError, ValueError):
    pass


class TooManyGlyphs(ElprError, ValueError):
    pass


class LayoutError(ElprError, ValueError):
    pass


class BadWeights(ElprError, ValueError):
    pass


# background_bank
class NoRoom(ElprError, ValueError):
    pass


class PartialHarvest(ElprError):
    """Fewer crops than requested fit inside the attempt budget.

    The crops that were found are available on ``templates``.
    """

    def __init__(self, message, templates):
        super().__init__(message)
        self.templates = templates


class EmptyBank(ElprError, LookupError):
    pass


class ChecksumMismatch(ElprError, IOError):
    pass


# trainer / checkpoints
class EmptySource(ElprError, ValueError):
    pass


class ZeroVariance(ElprError, ValueError):
    pass


class CheckpointError(ElprError, IOError):
    pass


# metrics
class DimensionMismatch(ElprError, ValueError):
    pass


class MatrixSqrtError(ElprError, ArithmeticError):
    pass


class EmptyInput(ElprError, ValueError):
    pass


class MissingAnnotation(ElprError, KeyError):
    pass


# dataset_io
class ManifestError(ElprError, ValueError):
    pass

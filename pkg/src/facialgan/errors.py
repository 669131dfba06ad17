"""Exception types shared across the pipeline."""


class FacialGANError(Exception):
    """Base class for all pipeline errors."""


class DecodeError(FacialGANError):
    """An image or mask file could not be decoded."""


class ShapeMismatch(FacialGANError):
    """Paired tensors disagree on spatial or channel dimensions."""


class UnknownClass(FacialGANError):
    """A raw mask value lies outside the remapping table."""


class EmptySplit(FacialGANError):
    """A dataset split contains no records."""


class LengthMismatch(FacialGANError):
    """Two vectors that must have equal length do not."""


class NonFiniteTerm(FacialGANError):
    """A loss term became NaN or infinite; training should abort."""

    def __init__(self, term: str, value: float):
        super().__init__(f"non-finite loss term {term!r}: {value}")
        self.term = term
        self.value = value


class DivergenceError(FacialGANError):
    """Training loss became non-finite."""


class TooFewSamples(FacialGANError):
    """Not enough samples to fit Gaussian statistics."""


class DimMismatch(FacialGANError):
    """Gaussian statistics have different feature dimensions."""


class NumericalError(FacialGANError):
    """A numerical routine produced an untrustworthy result."""


class DegenerateLabels(FacialGANError):
    """A labeled dataset contains a single class only."""


class EmptyScope(FacialGANError):
    """An accuracy scope selects zero pixels."""


class VersionMismatch(FacialGANError):
    """Checkpoint format version is not supported."""


class CorruptFile(FacialGANError):
    """Checkpoint file is truncated or fails checksum verification."""


class IncompatibleConfig(FacialGANError):
    """Checkpoint was produced under an incompatible model configuration."""


class BadMask(FacialGANError):
    """A request mask cannot be one-hot encoded."""


class MissingReference(FacialGANError):
    """Reference-guided synthesis was requested without a reference image."""

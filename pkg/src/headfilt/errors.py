"""Exception hierarchy shared across the package."""


class HeadFiltError(Exception):
    """Base class for all errors raised by this package."""


# --- IDS parsing ---

class ParseError(HeadFiltError):
    """Malformed ideographic description sequence."""


class EmptyInput(ParseError):
    pass


class MissingOperand(ParseError):
    pass


class TrailingInput(ParseError):
    pass


class DepthExceeded(ParseError):
    pass


# --- databases / corpora ---

class IoError(HeadFiltError):
    """File-level failure while reading an on-disk resource."""


class EmptyDatabase(IoError):
    pass


class FormatError(HeadFiltError):
    """A record does not match its documented on-disk format."""


class PositionOutOfRange(HeadFiltError):
    pass


class EmptyCorpus(HeadFiltError):
    pass


class EmptySets(HeadFiltError):
    pass


# --- embedding / numerics ---

class UnknownComponent(HeadFiltError):
    pass


class UnknownOperator(HeadFiltError):
    pass


class UnknownCharacter(HeadFiltError):
    pass


class DimensionMismatch(HeadFiltError):
    pass


class NonFiniteInput(HeadFiltError):
    pass


class DegenerateCalibration(HeadFiltError):
    """Dissimilar pairs are not separated beyond the margin; the scale
    cannot be set.  Train further or override the scale explicitly."""


class LengthMismatch(HeadFiltError):
    pass


# --- serialization ---

class VersionMismatch(HeadFiltError):
    pass


class CorruptFile(HeadFiltError):
    pass


class VocabMismatch(HeadFiltError):
    pass


class IdMismatch(HeadFiltError):
    pass

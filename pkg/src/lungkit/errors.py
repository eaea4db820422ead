class LungkitError(Exception):
    """Base class for all toolkit errors."""


class UnsupportedFormat(LungkitError):
    pass


class AudioIOError(LungkitError):
    pass


class TooShort(LungkitError):
    pass


class ShapeMismatch(LungkitError):
    pass


class LabelSyntaxError(LungkitError):
    def __init__(self, message, line_no=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line_no is not None:
            where += f"{line_no}: "
        super().__init__(where + message)
        self.line_no = line_no
        self.path = path


class EmptyReference(LungkitError):
    pass


class Degenerate(LungkitError):
    pass


class TooFewSubjects(LungkitError):
    pass


class OutOfRange(LungkitError):
    pass


class EmptyDataset(LungkitError):
    pass


class NonFiniteLoss(LungkitError):
    pass


class ModelIOError(LungkitError):
    pass


class VersionMismatch(LungkitError):
    pass


class Corrupt(LungkitError):
    pass


class IncompleteRuns(LungkitError):
    pass


class ConfigInvalid(LungkitError):
    pass


# Warnings: recoverable data problems that must not abort a corpus pass.
class MetadataParseWarning(UserWarning):
    pass


class LabelRangeWarning(UserWarning):
    pass


class TruncationWarning(UserWarning):
    pass

"""Exception types raised across the pipeline."""


class ComfortPrefError(Exception):
    """Base class for every pipeline error."""


class MalformedFile(ComfortPrefError):
    pass


class DuplicateVoteId(ComfortPrefError):
    pass


class EmptyDataset(ComfortPrefError):
    pass


class AmbiguousZone(ComfortPrefError):
    pass


class DegenerateInput(ComfortPrefError):
    pass


class EmptyNode(ComfortPrefError, ValueError):
    pass


class EmptyMatrix(ComfortPrefError):
    pass


class FeatureMismatch(ComfortPrefError):
    pass


class LengthMismatch(ComfortPrefError, ValueError):
    pass


class InsufficientOccupants(ComfortPrefError):
    pass


class EmptyZone(ComfortPrefError):
    pass


class InvalidConfig(ComfortPrefError):
    pass


class ConfigError(ComfortPrefError):
    pass


class MissingArtifact(ComfortPrefError):
    pass


class DegenerateLabels(UserWarning):
    """Training labels contain a single class; the model predicts it constantly."""

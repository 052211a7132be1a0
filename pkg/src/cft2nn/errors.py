class CFT2NNError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class FormatError(CFT2NNError):
    exit_code = 2


class IntegrityError(CFT2NNError):
    exit_code = 2


class ConfigError(CFT2NNError):
    exit_code = 2


class CacheVersionError(CFT2NNError):
    exit_code = 3


class TrainingError(CFT2NNError):
    exit_code = 4


class StateError(CFT2NNError):
    """Required upstream artifact (cache, checkpoint, features) is missing."""

    exit_code = 5

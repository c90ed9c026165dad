"""Exception hierarchy shared by all subpackages."""


class ConceptIncError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ConceptIncError, ValueError):
    pass


class CapabilityError(ConceptIncError, TypeError):
    """An expression used a primitive the gradient tape cannot differentiate."""


class NumericError(ConceptIncError, FloatingPointError):
    pass


class ConfigError(ConceptIncError, ValueError):
    pass


class VocabularyError(ConceptIncError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown token"


class AdapterError(ConceptIncError, ValueError):
    pass


class UniquenessError(ConceptIncError, ValueError):
    pass


class IntegrityError(ConceptIncError, ValueError):
    """A persisted file failed validation; ``field`` names the failing part."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class StateError(ConceptIncError, RuntimeError):
    pass


class ContractError(ConceptIncError, ValueError):
    pass


class SequencingError(ConceptIncError, RuntimeError):
    pass

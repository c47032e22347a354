"""Exception hierarchy. Every error carries the subsystem tag the CLI prints."""

from __future__ import annotations


class IdiompetError(Exception):
    """Base class for all package errors."""

    module = "idiompet"


class CorpusError(IdiompetError):
    """Malformed dataset file or corpus input."""

    module = "corpus"


class CapacityError(CorpusError):
    """A balanced sample was requested that the split cannot supply."""


class EmptyContextError(CorpusError):
    """No corpus line contained the requested expression."""


class PatternError(IdiompetError):
    """Invalid pattern template or verbalizer definition."""

    module = "pvp"


class RenderError(PatternError):
    """An example cannot be rendered under a pattern."""


class AdapterError(IdiompetError):
    """Backend-level failure."""

    module = "adapter"


class VerbalizerError(AdapterError):
    """A verbalizer word does not map to exactly one vocabulary token."""


class CapabilityError(AdapterError):
    """The backend does not support the requested operation."""


class CheckpointError(AdapterError):
    """Unreadable or incompatible checkpoint."""


class PetError(IdiompetError):
    module = "pet"


class IpetError(IdiompetError):
    module = "ipet"


class BertramError(IdiompetError):
    module = "bertram"


class InjectionError(BertramError):
    """Embedding injection rejected (duplicate, dimension, or overwrite rule)."""


class MetricError(IdiompetError):
    module = "metrics"


class ConfigError(IdiompetError):
    module = "config"

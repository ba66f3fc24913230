"""Exception types shared across the pipeline."""


class KnobTuneError(Exception):
    """Base class for all toolkit errors."""


class DomainError(KnobTuneError):
    """A value violates a declared domain (knob range, [0,1] component, bucket index)."""


class ParseError(KnobTuneError):
    """Structured text (plan string, predictor output, store record) failed to parse."""


class BudgetExceededError(KnobTuneError):
    """An enumeration or iteration budget would be exceeded."""


class TuningError(KnobTuneError):
    """A tuning run could not produce any usable trial."""


class GenerationError(KnobTuneError):
    """Workload generation produced no usable output."""


class StoreError(KnobTuneError):
    """A persisted store is missing, malformed, or has an unsupported version."""


class MissingArtifactError(KnobTuneError):
    """A pipeline stage requires an artifact another command must produce first."""

"""Exception hierarchy shared across the package."""


class LoramixError(Exception):
    """Base class for all package errors."""


class DatasetFormatError(LoramixError):
    """A token dataset file is malformed (message carries the line number)."""


class VocabMismatchError(LoramixError):
    """Two operands disagree on vocabulary size."""


class DuplicateIdError(LoramixError):
    """A bank contains the same dataset or adapter id twice."""


class TensorFileError(LoramixError):
    """A tensor container file cannot be parsed or violates format rules."""


class LayoutMismatchError(LoramixError):
    """Adapters in a bank do not share a bit-identical tensor layout."""


class WeightSimplexError(LoramixError):
    """A coefficient vector is outside the probability simplex."""


class MaskError(LoramixError):
    """A coefficient computation was asked to run on fully-masked input."""


class DegenerateBandwidthError(LoramixError):
    """Kernel bandwidth selection degenerated (all points identical)."""


class CacheFormatError(LoramixError):
    """A distance-matrix cache file is corrupt (bad magic or checksum)."""


class CacheVersionError(LoramixError):
    """A distance-matrix cache file carries an unsupported format version."""


class ConvergenceError(LoramixError):
    """An iterative optimization failed to converge or produced non-finite values."""


class GradCheckError(LoramixError):
    """Analytic and finite-difference gradients disagree beyond tolerance."""


class PipelineStageError(LoramixError):
    """A pipeline stage failed; `stage` names the first failing stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage

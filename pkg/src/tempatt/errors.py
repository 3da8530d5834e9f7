"""Exception hierarchy shared across the package."""


class TempattError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(TempattError):
    """Matrix dimensions incompatible with the requested operation."""


class ContractError(TempattError):
    """An argument violates a documented precondition."""


class NumericError(TempattError):
    """An operation produced (or would produce) non-finite values."""


class ConfigError(TempattError):
    """Invalid model or training configuration."""


class VocabError(TempattError):
    """Token or time id outside the model's vocabularies."""


class SequenceLengthError(TempattError):
    """Sequence longer than the model's maximum input length."""


class DegenerateTimeError(TempattError):
    """Time representation matrix has (near-)zero norm; its normalization is undefined."""


class CheckpointError(TempattError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint written with an unsupported format version."""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint bytes are truncated, padded, or otherwise malformed."""


class CorpusIOError(TempattError):
    """Corpus or target file missing or unreadable."""


class EmptyCorpusError(TempattError):
    """Corpus file contained no non-blank sentences."""


class FormatError(TempattError):
    """Malformed line in a data file; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


class AbsentWordError(TempattError):
    """A word does not occur in the corpus it was requested from."""

    def __init__(self, word: str, time_label: str):
        super().__init__(f"word {word!r} does not occur in corpus at time {time_label!r}")
        self.word = word
        self.time_label = time_label


class DegenerateVectorError(TempattError):
    """Zero vector where a direction is required (cosine distance)."""


class DegenerateMetricError(TempattError):
    """Correlation undefined: zero variance or all-tied input."""


class EvaluationError(TempattError):
    """Too few scored words to evaluate."""


class TrainingError(TempattError):
    """Training failed; carries the failing step index when known."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step

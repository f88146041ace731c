"""Exception types shared across the pipeline stages."""


class CorpusmillError(Exception):
    """Base class for all pipeline errors."""


# --- corpus io ---

class MalformedRecord(CorpusmillError):
    """A record could not be parsed into a Document. Callers usually skip and count."""


class EmptyCorpus(CorpusmillError):
    """Ingestion or analysis found zero valid documents."""


class IoFailure(CorpusmillError):
    """Filesystem-level failure while reading or writing corpus artifacts."""


class UnknownTokenizer(CorpusmillError):
    """tokenizer_id is not registered."""


# --- classifier ---

class EmptyClass(CorpusmillError):
    """A training class has no documents."""


class DivergedTraining(CorpusmillError):
    """A non-finite parameter appeared during training."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite parameter at training step {step}")


class EmptyInput(CorpusmillError):
    """An operation requiring a non-empty input got an empty one."""


# --- rewrite engine ---

class EmptyDocument(CorpusmillError):
    """Document text is empty after the truncation policy."""


class MissingImprovedTags(CorpusmillError):
    """Completion has no improved-response tag pair."""


class EndpointUnreachable(CorpusmillError):
    """The generation endpoint never answered, even after retries."""


class BudgetExceeded(CorpusmillError):
    """The optional max-request cap was hit mid-run."""


# --- mixing ---

class EmptySource(CorpusmillError):
    """A mix source manifest contains no documents."""


class ZeroWeightAll(CorpusmillError):
    """Every mix weight is zero; nothing can be normalized."""


class CapViolated(CorpusmillError):
    """A source would exceed the repeat cap and no override was given."""


class EmptyReference(CorpusmillError):
    """overlap_fraction got an empty reference set."""


# --- analysis ---

class TooFewPairs(CorpusmillError):
    """Rank correlation needs at least 3 pairs."""


class DegenerateVariance(CorpusmillError):
    """All values on one side are equal; rank correlation is undefined."""


class TooFewSamples(CorpusmillError):
    """Density estimation needs at least 2 samples."""


class SampleTooLarge(CorpusmillError):
    """Requested sample size exceeds what the corpus can provide."""


class DimensionMismatch(CorpusmillError):
    """Embedding vectors for a pair have different lengths."""


class ProviderFailure(CorpusmillError):
    """The embedding provider failed for a document."""


# --- orchestrator ---

class ConfigInvalid(CorpusmillError):
    """Pipeline configuration failed validation."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.diagnostics)
        super().__init__(f"invalid config: {lines}")


class StageFailed(CorpusmillError):
    """A pipeline stage raised; completed artifacts are left intact."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")

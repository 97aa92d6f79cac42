"""Exception types shared across the pipeline.

Every error raised by the public API is a SeqriskError subclass so the CLI
can map failures to a single machine-parseable line and a nonzero exit.
"""


class SeqriskError(Exception):
    """Base class; .kind is the stable machine-readable identifier."""

    kind = "error"


class DimensionError(SeqriskError):
    kind = "dimension"

    def __init__(self, what, left, right):
        super().__init__(f"{what}: shapes {tuple(left)} and {tuple(right)} do not conform")


class InvalidLabelError(SeqriskError):
    kind = "invalid-label"


class InvalidRateError(SeqriskError):
    kind = "invalid-rate"


class NonFiniteGradientError(SeqriskError):
    kind = "non-finite-gradient"

    def __init__(self, param_name):
        super().__init__(f"gradient of parameter '{param_name}' contains NaN/Inf")


class NonFiniteLossError(SeqriskError):
    kind = "non-finite-loss"

    def __init__(self, epoch, batch):
        super().__init__(f"loss became non-finite at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class SequenceTooShortError(SeqriskError):
    kind = "sequence-too-short"

    def __init__(self, length, width):
        super().__init__(f"sequence length {length} is shorter than filter width {width}")


class UndefinedMetricError(SeqriskError):
    kind = "undefined-metric"


class DataIntegrityError(SeqriskError):
    kind = "data-integrity"


class SchemaError(SeqriskError):
    kind = "schema"


class ConfigError(SeqriskError):
    kind = "config"

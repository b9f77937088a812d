"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(RuntimeError):
    """A caller violated an operation's precondition."""


class ConfigurationError(ValueError):
    """Invalid or unsatisfiable configuration."""


class IngestionError(ValueError):
    """Input data could not be parsed into a valid corpus."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, series_ids, value):
        self.epoch = epoch
        self.series_ids = list(series_ids)
        self.value = value
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch} on series {', '.join(map(str, self.series_ids))}"
        )

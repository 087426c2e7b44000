"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 2, NumericError -> 3.
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (corpus, vocab, checkpoint)."""


class NumericError(FloatingPointError):
    """Non-finite values encountered during training or inference."""


class StratificationWarning(UserWarning):
    """A class has fewer members than folds; balance is best effort."""


class FoldError(RuntimeError):
    """A cross-validation fold failed; ``__cause__`` holds the original error."""

    def __init__(self, fold: int, cause: BaseException):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold
        self.cause = cause

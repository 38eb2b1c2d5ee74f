"""Exception hierarchy shared by every seplab module."""

from typing import Optional


class SeplabError(Exception):
    """Base class of all seplab errors."""


class RejectedInputError(SeplabError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class DataFormatError(SeplabError):
    """A file does not follow the format it claims to be in.

    Args:
        message (str): Human readable description.
        field (str): Name of the offending header field or record part.
        path (str, optional): File the error was found in.
    """

    def __init__(self, message: str, field: str, path: Optional[str] = None) -> None:
        self.field = field
        self.path = path
        location = f" ({path})" if path else ""
        super().__init__(f"{message} [field: {field}]{location}")


class NumericStateError(SeplabError, ArithmeticError):
    """Parameters or inputs contain NaN or infinite values."""


class DivergenceError(NumericStateError):
    """Training produced a non-finite loss.

    Args:
        epoch (int): Epoch in which the loss diverged.
        batch (int): Index of the offending mini-batch within the epoch.
        loss (float): The loss value observed.
    """

    def __init__(self, epoch: int, batch: int, loss: float) -> None:
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch} (loss={loss})"
        )

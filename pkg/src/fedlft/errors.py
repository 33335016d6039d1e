"""Exception hierarchy shared across the package."""

from __future__ import annotations


class FedLFTError(Exception):
    """Base class for every error raised by fedlft."""


class OutOfBounds(FedLFTError, IndexError):
    pass


class DuplicateCoordinate(FedLFTError, ValueError):
    pass


class NonFiniteValue(FedLFTError, ValueError):
    pass


class EmptyTensor(FedLFTError, ValueError):
    pass


class EmptySet(FedLFTError, ValueError):
    pass


class LengthMismatch(FedLFTError, ValueError):
    pass


class DimensionMismatch(FedLFTError, ValueError):
    pass


class RoundMismatch(FedLFTError, ValueError):
    pass


class InvalidHyperparams(FedLFTError, ValueError):
    pass


class ParseError(FedLFTError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class Disconnected(FedLFTError, ConnectionError):
    """A client dropped out of the current round."""

    def __init__(self, user: int):
        super().__init__(f"client {user} disconnected")
        self.user = user

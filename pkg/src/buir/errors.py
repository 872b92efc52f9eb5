class DataError(Exception):
    """Unreadable, malformed or empty interaction data."""


class NumericalError(ArithmeticError):
    """Non-finite values or collapsed representations during training."""


class DegenerateNormError(NumericalError):
    """A vector entering a cosine has (near-)zero norm."""

"""Exceptions shared across modules."""


class NumericBudgetError(ValueError):
    """A computation would exceed its configured size or work budget."""

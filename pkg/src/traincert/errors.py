"""Exception taxonomy shared across the toolkit.

The CLI maps these to distinct exit codes: configuration problems exit
with 2, data problems with 3, violated internal invariants with 4.
"""


class ConfigError(Exception):
    """A configuration value is missing, malformed or inconsistent."""


class DataError(Exception):
    """A dataset file or generated dataset is unusable."""


class InvariantError(Exception):
    """An internal soundness invariant failed; indicates a bug."""

from __future__ import annotations


class MsgfemError(RuntimeError):
    """Root of every error this package raises on purpose."""


class ConfigError(MsgfemError):
    """The inputs are wrong: mesh/partition sizes, file contents, requests.

    The CLI maps these to exit code 2.
    """


class NumericalError(MsgfemError):
    """A factorization or eigensolve broke down on inputs that looked valid.

    The CLI maps these to exit code 3.
    """

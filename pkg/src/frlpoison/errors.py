"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Invalid or unknown configuration (bad env id, bad key, violated invariant)."""


class InputError(ValueError):
    """A value handed to an operation is malformed (shape, bounds, length)."""


class ProtocolError(RuntimeError):
    """An operation was called in a state where the protocol forbids it."""

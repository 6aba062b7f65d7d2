"""Exception hierarchy shared across the engine.

ConfigError maps to CLI exit code 2, DataError to exit code 3. Everything the
package raises on purpose derives from SpeechMotionError so callers can catch
one type at the process boundary.
"""

from __future__ import annotations


class SpeechMotionError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SpeechMotionError):
    """Invalid configuration value, file, or combination of settings."""


class DataError(SpeechMotionError):
    """Malformed or out-of-contract runtime data (audio, tensors, files)."""


class DimensionError(DataError):
    """Tensor shape does not match what the operation requires."""

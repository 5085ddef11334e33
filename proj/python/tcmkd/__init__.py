"""Temporal cross-modal knowledge distillation for vibration fault detection."""

try:
    from ._tcmkd import *  # noqa: F401,F403
    from ._tcmkd import __version__  # noqa: F401
except ImportError:  # plain-CMake builds place the module next to the package
    from _tcmkd import *  # noqa: F401,F403
    from _tcmkd import __version__  # noqa: F401

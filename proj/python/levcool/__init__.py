"""Python bindings for the levcool feedback-cooling library."""

from ._levcool import *  # noqa: F401,F403

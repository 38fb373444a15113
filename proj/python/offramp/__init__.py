"""Early-exit transformer encoder toolkit (C++ core with python bindings)."""

from ._offramp import *  # noqa: F401,F403
from ._offramp import __doc__  # noqa: F401

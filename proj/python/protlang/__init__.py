"""Protein-language pipeline bindings."""

try:
    from ._core import *  # noqa: F401,F403
    from ._core import __doc__  # noqa: F401
except ImportError:  # development layout: extension sits on sys.path
    from _core import *  # noqa: F401,F403
    from _core import __doc__  # noqa: F401

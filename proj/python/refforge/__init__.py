"""refforge: gradient-guided attack sequences against reference-following code models."""

try:
    from refforge._core import *  # noqa: F401,F403  (installed layout)
    from refforge._core import __version__  # noqa: F401
except ImportError:  # in-tree build: _core.so sits on PYTHONPATH
    from _core import *  # noqa: F401,F403
    from _core import __version__  # noqa: F401

try:
    from ._deptest import *  # noqa: F401,F403  (installed package layout)
except ImportError:
    from _deptest import *  # noqa: F401,F403  (in-tree build on PYTHONPATH)

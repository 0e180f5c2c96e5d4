"""Backend selection for the hot loops.

The numba backend is used when available; setting the environment variable
``CHAINLAB_NO_NUMBA=1`` (or a missing numba install) selects the pure-numpy
fallback.  Both expose the same public surface; ``BACKEND`` reports which
one is active.
"""

import os

if os.environ.get("CHAINLAB_NO_NUMBA", "") == "1":
    from ._numpy import *  # noqa: F401,F403
    from ._numpy import BACKEND  # noqa: F401
else:
    try:
        from ._numba import *  # noqa: F401,F403
        from ._numba import BACKEND  # noqa: F401
    except ImportError:
        from ._numpy import *  # noqa: F401,F403
        from ._numpy import BACKEND  # noqa: F401

"""Hot numeric kernels with two interchangeable backends.

The numba backend JIT-compiles the inner loops; the pure-numpy backend is
selected by setting the environment variable ``FLOWSCAN_DISABLE_NUMBA`` (to
``1``/``true``/...) or is used automatically when numba is unavailable.
Both backends are deterministic functions of their array inputs; random
number generation always happens outside the kernels, so results do not
depend on the backend choice.

``flowscan benchmark --kernels`` compares the two backends side by side.
"""

import importlib
import os

from . import numpy_impl

_flag = os.environ.get("FLOWSCAN_DISABLE_NUMBA", "").strip().lower()
_numba_disabled = _flag in {"1", "true", "yes", "on"}

_active = numpy_impl
BACKEND = "numpy"
if not _numba_disabled:
    try:
        _active = importlib.import_module(".numba_impl", __name__)
        BACKEND = "numba"
    except ImportError:
        pass

bilinear_gather = _active.bilinear_gather
line_gram = _active.line_gram
candidate_gram_logdet = _active.candidate_gram_logdet
select_max_sum_with_exclusion = _active.select_max_sum_with_exclusion
ellipse_field = _active.ellipse_field


def active_backend():
    """Name of the backend serving the kernel calls ('numba' or 'numpy')."""
    return BACKEND

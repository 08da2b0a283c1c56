"""First-order mean field games with the Grushin Hamiltonian H = (p1^2 + h(x1)^2 p2^2)/2."""

import os as _os

# the TBB layer shipped with some numba builds is too old; workqueue is always available
_os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"

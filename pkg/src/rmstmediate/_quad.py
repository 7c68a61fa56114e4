"""Shared Gauss-Legendre rule used by both kernel backends.

Both backends must integrate with the same nodes so their results agree
to rounding error, not just to quadrature tolerance.
"""

import numpy as np

GL_ORDER = 16

_nodes, _weights = np.polynomial.legendre.leggauss(GL_ORDER)

# nodes/weights for the standard interval [-1, 1], ascending
GL_NODES = np.ascontiguousarray(_nodes)
GL_WEIGHTS = np.ascontiguousarray(_weights)

# relative tolerance at which interval-doubling refinement stops
DEFAULT_RTOL = 1e-8

# refinement ceiling: 2**MAX_LEVEL panels per base subinterval
MAX_LEVEL = 9

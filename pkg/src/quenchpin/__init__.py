"""quenchpin: pinning certificates and direct simulation for interfaces in
quenched random obstacle fields.

Submodules
----------
obstacles     random/lattice obstacle fields f(x, y)
percolation   minimal 1-Lipschitz open surfaces and tail statistics
glue          smooth box-constant interpolation of obstacle heights
qew           stationary supersolution for the semilinear (QEW) model
mcf           stationary supersolution for graph mean curvature flow
sim           explicit time stepping, pinning/escape detection
experiments   batch experiment drivers behind the CLI
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CapExceeded,
    ConfigError,
    InfeasibleError,
    QuenchpinError,
    WindowError,
)

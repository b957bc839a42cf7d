"""Maximum-cooperation-number modeling and burst-trace analysis for
collective decay in inhomogeneous extended ensembles."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    AtomSpecies,
    DriveConfig,
    EnsembleGeometry,
    FresnelNumbers,
    McnBreakdown,
    ModelStageError,
    mcn,
)
from .numerics import (  # noqa: F401
    LinFitResult,
    QuadratureSpec,
    SampleStats,
    integrate,
    linfit,
    minimize_scalar,
    summary_stats,
)

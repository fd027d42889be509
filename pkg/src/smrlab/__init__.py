"""
smrlab: P1 finite elements for the stochastic heat equation on boxes.

Discrete Laplacian and its functional calculus, contour quadrature,
coupled Monte Carlo simulation on nested meshes, and the estimators used to
check h-uniform operator bounds, stochastic maximal regularity and strong
convergence rates.
"""
from .errors import (CapacityError, ConfigurationError, DomainError, GeometryError,
                     PoleError, SmrlabError, UnsupportedInputError, UsageError)
from .mesh import SimplicialMesh, build_box_mesh, refine_uniform, shape_metrics
from .fem import (DiscreteOperators, FeFunction, FeSpace, apply_Ah, assemble, l2_project,
                  lq_norm, prolongate, ritz_project)
from .spectral import (HolomorphicSymbol, OperatorNormEstimate, apply_symbol, eigendecompose,
                       operator_qnorm)
from .dunford import ContourSpec, dunford_apply
from .spde import NoiseModel, SimConfig, TrajectorySet, simulate
from .metrics import NormEstimate, RateFit, fit_rate
from .config import ExperimentConfig, load_config

__version__ = "0.1.0"

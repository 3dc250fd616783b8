"""Deep-learning surrogates of GMsFEM coarse discretizations.

Fine-scale bilinear finite elements (:mod:`fem`), the offline GMsFEM stage
(:mod:`gmsfem`), channelized permeability ensembles (:mod:`permeability`),
dense networks (:mod:`neural`) and the surrogate that predicts basis
functions and local stiffness matrices of a target block (:mod:`surrogate`).
"""

from .gmsfem import GMsFEM
from .mesh import GridSpec, build_grid, neighborhood, target_region
from .neural import MLPRegressor
from .surrogate import GMsFEMSurrogate

__all__ = ["GMsFEM", "GMsFEMSurrogate", "GridSpec", "MLPRegressor", "build_grid", "neighborhood",
           "target_region"]
__version__ = "0.1.0"

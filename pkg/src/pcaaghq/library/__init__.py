"""Reusable statistical building blocks and built-in test models."""

from .fixtures import generate_mini_elgm_data, load_survey_csv
from .formulas import (
    PHIA_MDRI_YEARS,
    kappa_recent,
    kish_ess,
    log_skewnormal_integrand,
    skewnormal_integrand,
    weighted_mean,
    xbin_log_density,
)
from .models import (
    Fig2Model,
    GaussConjugateModel,
    GaussLinearModel,
    GaussQuadraticModel,
    MiniElgmModel,
)
from .structures import (
    Adjacency,
    PrecisionStructure,
    bym2_effect,
    grid_adjacency,
    precision_ar1,
    precision_bym2,
    precision_icar,
    precision_iid,
)

BUILTIN_MODELS = (
    "fig2",
    "gauss_quadratic",
    "gauss_conjugate",
    "gauss_linear",
    "mini_elgm",
    "mini_elgm_age",
)

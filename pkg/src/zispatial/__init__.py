"""Bayesian spatial two-part models for zero-inflated data.

Latent occurrence and prevalence fields are approximated by projected
Moran eigenvector expansions on a triangular mesh, yielding low-dimensional
fast-mixing posteriors for hurdle and mixture models over counts and
semi-continuous observations.
"""

from .geometry import (
    TriangleMesh,
    adjacency,
    build_mesh,
    build_projector,
    load_mesh,
    locate,
    save_mesh,
)
from .inference import (
    Chain,
    FixedRankKriging,
    GoldStandard,
    PicarZ,
    PredictionSummary,
    PriorSpec,
    SamplerConfig,
    fit,
    load_chain,
    log_posterior,
    predict,
    save_chain,
    save_chain_summary,
)
from .likelihoods import (
    HURDLE_COUNT,
    HURDLE_LOGNORMAL,
    MIXTURE_POISSON,
    MIXTURE_TOBIT,
    TwoPartFamily,
    family_from_tag,
    linear_predictor,
    loglik,
    occurrence_prob,
    positivity_prob,
    predictive_mean,
    total_loglik,
)
from .metrics import auc, coverage, ess_batch_means, rmspe
from .rank_selection import RankGrid, binarize_occurrence, fit_glm, positive_subset, select_ranks
from .simulation import (
    BisquareDesign,
    CrossGPConfig,
    MaternParams,
    SyntheticDataset,
    build_bisquare_design,
    generate_dataset,
    load_dataset,
    matern_cov,
    sample_cross_fields,
    save_dataset,
)
from .spectral import (
    MoranBasis,
    PrecisionSpec,
    ReducedPrecision,
    build_precision,
    leading_eigenvectors,
    load_basis,
    moran_operator,
    morans_i,
    reduced_precision,
    save_basis,
)

__version__ = "0.1.0"

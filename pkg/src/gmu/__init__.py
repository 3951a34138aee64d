"""Feature-space Gaussian mixture uncertainty and chi-square OOD detection.

A class-conditional GMM is fitted to segmentation-network features.  Sampling
its means (Gaussian) and covariances (Inverse-Wishart) yields an ensemble of
mixtures: the entropy of their class votes is the epistemic uncertainty and
the entropy of their mean responsibilities the aleatoric one.  Samples whose
minimum squared Mahalanobis distance exceeds the chi-square quantile are
flagged out-of-distribution.
"""

from .ensemble import (
    GmmEnsemble,
    ParamPosterior,
    aleatoric_entropy,
    build_posterior,
    ddu_epistemic_score,
    ensemble_scores,
    epistemic_entropy,
    mean_responsibilities,
    sample_ensemble,
)
from .gmm import FeatureSet, GmmModel, classify, component_log_scores, fit_gmm, mixture_log_density, responsibilities
from .ood import OodPolicy, SampleReport, is_ood, make_policy, score_arrays, score_batch

__version__ = "0.1.0"

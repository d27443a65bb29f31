"""Linear contextual bandits augmented with post hoc context."""
from .core import (
    BanditConfig,
    Interaction,
    Learner,
    LearnerModel,
    Mode,
    SufficientStats,
    covariance,
    fit_context_only,
    fit_full_feedback,
    fit_model,
    fit_posthoc_augmented,
    lcb,
    lcb_values,
    observe,
    select_action,
    select_uniform,
    transform_matrix,
)
from .kernels import BACKEND

__version__ = "0.1.0"

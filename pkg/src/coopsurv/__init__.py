"""Multimodal survival modeling with collaborative expert fusion."""

from .autodiff import Adam, Tensor, no_grad
from .data import (Cohort, GroundTruth, PatientRecord, SurvivalLabel,
                   SynthConfig, discretize_times, generate_synthetic_cohort,
                   load_cohort, save_cohort, split_folds, subsample)
from .losses import (ContrastiveBatch, combined_loss, contrastive_loss,
                     discrete_survival, survival_nll)
from .models import (CollaborativeSurvivalModel, EarlyFusionSurvivalModel,
                     LateFusionSurvivalModel, MixtureOfExpertsSurvivalModel,
                     MODEL_KINDS, MultiHeadSurvivalModel, UnimodalSurvivalModel,
                     make_model)
from .stats import (concordance_index, kaplan_meier, log_rank,
                    risk_from_hazards, stratify_by_median, wilcoxon_signed_rank)
from .training import (MetricsRecord, RunConfig, compare_models, cross_validate,
                       evaluate, finetune, load_model_checkpoint, pretrain,
                       save_model_checkpoint)

__all__ = [
    "Adam", "Tensor", "no_grad",
    "Cohort", "GroundTruth", "PatientRecord", "SurvivalLabel", "SynthConfig",
    "discretize_times", "generate_synthetic_cohort", "load_cohort",
    "save_cohort", "split_folds", "subsample",
    "ContrastiveBatch", "combined_loss", "contrastive_loss",
    "discrete_survival", "survival_nll",
    "CollaborativeSurvivalModel", "EarlyFusionSurvivalModel",
    "LateFusionSurvivalModel", "MixtureOfExpertsSurvivalModel", "MODEL_KINDS",
    "MultiHeadSurvivalModel", "UnimodalSurvivalModel", "make_model",
    "concordance_index", "kaplan_meier", "log_rank", "risk_from_hazards",
    "stratify_by_median", "wilcoxon_signed_rank",
    "MetricsRecord", "RunConfig", "compare_models", "cross_validate",
    "evaluate", "finetune", "load_model_checkpoint", "pretrain",
    "save_model_checkpoint",
]
__version__ = "0.1.0"

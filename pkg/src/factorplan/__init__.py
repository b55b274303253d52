"""Compositional diffusion planning over spatial-temporal factor graphs."""

from .graph import (
    FactorKind,
    GoalCondition,
    GraphError,
    PlanGraph,
    Role,
    Semantic,
    SkillFactorSpec,
    SpatialFactorSpec,
    StateGraph,
    VariableNode,
    Violation,
    apply_effects,
    flatten,
    validate_symbolic,
)
from .skeleton import ParseError, parse_skeleton, serialize_skeleton
from .schedule import NoiseSchedule
from .scores import ConfigurationError, ContractError, ScoreModel, compose_scores
from .sampler import (
    CandidatePlan,
    SamplerConfig,
    forward_noise,
    dsm_loss,
    rank_candidates,
    reverse_sample,
)
from .factors import (
    GaussianFactor,
    GaussianMixtureFactor,
    ReachabilityFactor,
    TransformConstraintFactor,
    composed_gaussian_moments,
    constraint_eps,
    gaussian_eps,
    pose_distance,
)

__version__ = "0.1.0"

"""Goal-condition residuals for candidate ranking and success checking."""

from __future__ import annotations

import numpy as np

from .factors import (
    GaussianFactor,
    ReachabilityFactor,
    TransformConstraintFactor,
    build_factor_model,
)
from .graph import FactorKind, GoalCondition, PlanGraph, SpatialFactorSpec

__all__ = ["factor_residual", "goal_residuals"]


def factor_residual(spec: SpatialFactorSpec, values: list[np.ndarray]) -> float:
    """Nonnegative residual of one goal factor; 0 iff exactly satisfied."""
    if spec.kind is FactorKind.GAUSSIAN:
        model = GaussianFactor(spec.params["mean"], spec.params["cov"])
        x = np.concatenate(values, axis=-1)
        diff = x - model.mean
        sol = np.linalg.solve(model.cov, diff)
        return float(np.sqrt(np.maximum(diff @ sol, 0.0)))
    if spec.kind in (FactorKind.FIXED_TRANSFORM, FactorKind.ALIGNED):
        model = build_factor_model(spec)
        assert isinstance(model, TransformConstraintFactor)
        return float(model.residual(values[0], values[1]))
    if spec.kind is FactorKind.REACHABLE:
        model = ReachabilityFactor(spec.params["center"], spec.params["radius"])
        return float(model.residual(values[0]))
    if spec.kind is FactorKind.GRASPED:
        return 0.0  # symbolic factor; satisfied by construction
    raise ValueError(f"no residual defined for factor kind {spec.kind.value}")


def goal_residuals(
    plan: PlanGraph, goal: GoalCondition, x: np.ndarray
) -> tuple[dict[str, float], float]:
    """Per-factor residuals and their weighted sum for one decision vector."""
    per_factor: dict[str, float] = {}
    total = 0.0
    for spec, w in zip(goal.factors, goal.residual_weights):
        values = plan.gather(x, spec.members)
        r = factor_residual(spec, values)
        per_factor[spec.id] = r
        total += w * r
    return per_factor, total

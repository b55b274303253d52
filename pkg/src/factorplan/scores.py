"""Score-model interface and plan-level score composition.

Convention: a model's eval returns the noise prediction eps per member slot,
with eps = sigma(t) * grad NLL for a sigma(t)-noised density. The reverse
sampler *subtracts* eps, so descent directions carry a positive gradient
sign here. score = -eps / sigma(t).
"""

from __future__ import annotations

import abc

import numpy as np

from .graph import PlanGraph, SkillFactorSpec, SpatialFactorSpec

__all__ = ["ScoreModel", "ConfigurationError", "ContractError", "compose_scores",
           "active_spatial_factors"]


class ConfigurationError(Exception):
    """A factor has no model bound, or a model is bound inconsistently."""


class ContractError(Exception):
    """Model output violated the per-slot dimension contract."""


class ScoreModel(abc.ABC):
    """Per-factor noise predictor over an ordered tuple of member slots."""

    #: per-slot dimensionalities, in member order
    member_dims: tuple[int, ...]

    @abc.abstractmethod
    def eval(self, values: list[np.ndarray], t, sigma) -> list[np.ndarray]:
        """Noise prediction per slot.

        `values[i]` has shape (..., member_dims[i]); `t` and `sigma` are
        scalars (or arrays broadcastable against the batch for training).
        Deterministic given (values, t) in inference mode.
        """

    def marginal_eval(self, subset: tuple[int, ...], values: list[np.ndarray],
                      t, sigma) -> list[np.ndarray]:
        """Noise prediction for the marginal over a slot subset.

        `subset` indexes into member slots; `values` aligns with `subset`.
        Unsupported by default.
        """
        raise NotImplementedError(
            f"{type(self).__name__} does not support marginal evaluation"
        )

    def check_slots(self, values: list[np.ndarray]) -> None:
        if len(values) != len(self.member_dims):
            raise ContractError(
                f"expected {len(self.member_dims)} slots, got {len(values)}"
            )
        for i, (v, d) in enumerate(zip(values, self.member_dims)):
            if v.shape[-1] != d:
                raise ContractError(f"slot {i}: expected dim {d}, got {v.shape[-1]}")


def active_spatial_factors(plan: PlanGraph) -> list[SpatialFactorSpec]:
    """Every spatial factor active in at least one state, once each."""
    seen: dict[str, SpatialFactorSpec] = {}
    for sg in plan.states:
        for fid in sg.factors:
            seen.setdefault(fid, plan.factor(fid))
    return list(seen.values())


def _scatter_add(out: np.ndarray, plan: PlanGraph, member_ids, contributions,
                 model_name: str, weight: float = 1.0) -> None:
    for node_id, eps in zip(member_ids, contributions):
        sl = plan.layout[node_id]
        if eps.shape[-1] != sl.stop - sl.start:
            raise ContractError(
                f"{model_name}: output dim {eps.shape[-1]} for node {node_id} "
                f"does not match its slice width {sl.stop - sl.start}"
            )
        out[..., sl] += weight * eps


def compose_scores(
    plan: PlanGraph,
    models: dict[str, ScoreModel],
    x_t: np.ndarray,
    t: float,
    sigma: float,
) -> np.ndarray:
    """Composed noise prediction of the whole plan at one diffusion time.

    Scatter-adds every temporal skill score, every active spatial factor score
    (scaled by factor weight), and every external constraint score, then
    subtracts the marginal compensation 0.5*(eps_minus + eps_plus) on each
    shared node's slice. `x_t` may carry leading batch axes.

    `models` is keyed by factor id (skill id for temporal factors). Factors
    with weight 0 are skipped and need no model.
    """
    x_t = np.asarray(x_t, dtype=float)
    if x_t.shape[-1] != plan.total_dim:
        raise ContractError(
            f"x_t last-axis dim {x_t.shape[-1]} != plan total_dim {plan.total_dim}"
        )
    out = np.zeros_like(x_t)

    for sk in plan.skills:
        model = models.get(sk.id)
        if model is None:
            raise ConfigurationError(f"no score model bound for skill factor {sk.id!r}")
        values = plan.gather(x_t, sk.member_order)
        model.check_slots(values)
        eps = model.eval(values, t, sigma)
        _scatter_add(out, plan, sk.member_order, eps, f"skill {sk.id}")

    spatial = active_spatial_factors(plan) + list(plan.external_constraints)
    for spec in spatial:
        if spec.weight == 0.0:
            continue
        model = models.get(spec.id)
        if model is None:
            raise ConfigurationError(
                f"no score model bound for spatial factor {spec.id!r} "
                f"(kind {spec.kind.value}, weight {spec.weight})"
            )
        values = plan.gather(x_t, spec.members)
        model.check_slots(values)
        eps = model.eval(values, t, sigma)
        _scatter_add(out, plan, spec.members, eps, f"factor {spec.id}", spec.weight)

    for node_id, (sk_a, sk_b) in plan.shared_nodes().items():
        x_v = x_t[..., plan.layout[node_id]]
        for sk in (sk_a, sk_b):
            model = models[sk.id]
            slot = sk.member_order.index(node_id)
            (eps_m,) = model.marginal_eval((slot,), [x_v], t, sigma)
            out[..., plan.layout[node_id]] -= 0.5 * eps_m
    return out

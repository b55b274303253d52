import numpy as np
import pytest

from factorplan import (
    ConfigurationError,
    ContractError,
    GaussianFactor,
    TransformConstraintFactor,
)
from factorplan.scores import ScoreModel, active_spatial_factors, compose_scores


def _skill_models(plan, rng, dims):
    models = {}
    for sk in plan.skills:
        d = sum(dims)
        A = rng.normal(size=(d, d))
        models[sk.id] = GaussianFactor(
            rng.normal(size=d), A @ A.T + np.eye(d), member_dims=tuple(dims)
        )
    return models


def test_missing_skill_model_raises(linear_chain, rng):
    x = rng.normal(size=linear_chain.total_dim)
    with pytest.raises(ConfigurationError, match="pi1"):
        compose_scores(linear_chain, {}, x, 0.5, 0.2)


def test_missing_spatial_model_raises(independent_parallel, rng):
    plan = independent_parallel
    models = _skill_models(plan, rng, (4, 4, 4, 4, 4))
    x = rng.normal(size=plan.total_dim)
    # gl/gr have weight 0 and need no model, but the external constraint does
    with pytest.raises(ConfigurationError, match="mu1"):
        compose_scores(plan, models, x, 0.5, 0.2)


def test_weight_zero_factors_skipped(independent_parallel, rng):
    plan = independent_parallel
    models = _skill_models(plan, rng, (4, 4, 4, 4, 4))
    models["mu1"] = TransformConstraintFactor(
        admissible=[np.asarray(plan.external_constraints[0].params["admissible"][0])]
    )
    x = rng.normal(size=plan.total_dim)
    out = compose_scores(plan, models, x, 0.5, 0.2)
    assert out.shape == x.shape
    assert np.isfinite(out).all()


def test_bad_x_dim_raises(linear_chain, rng):
    models = _skill_models(linear_chain, rng, (2, 1, 2))
    with pytest.raises(ContractError):
        compose_scores(linear_chain, models, np.zeros(3), 0.5, 0.2)


def test_model_output_dim_checked(linear_chain, rng):
    class Broken(ScoreModel):
        member_dims = (2, 1, 2)

        def eval(self, values, t, sigma):
            return [np.zeros(v.shape[:-1] + (v.shape[-1] + 1,)) for v in values]

    models = {sk.id: Broken() for sk in linear_chain.skills}
    with pytest.raises(ContractError):
        compose_scores(linear_chain, models, np.zeros(linear_chain.total_dim), 0.5, 0.2)


def test_compose_matches_manual_sum(linear_chain, rng):
    plan = linear_chain
    models = _skill_models(plan, rng, (2, 1, 2))
    x = rng.normal(size=plan.total_dim)
    t, sigma = 0.4, 0.3
    out = compose_scores(plan, models, x, t, sigma)

    ref = np.zeros_like(x)
    for sk in plan.skills:
        vals = plan.gather(x, sk.member_order)
        eps = models[sk.id].eval(vals, t, sigma)
        for node_id, e in zip(sk.member_order, eps):
            ref[plan.layout[node_id]] += e
    sl = plan.layout["O1"]
    for sk in plan.skills:
        slot = sk.member_order.index("O1")
        (e,) = models[sk.id].marginal_eval((slot,), [x[sl]], t, sigma)
        ref[sl] -= 0.5 * e
    np.testing.assert_allclose(out, ref, rtol=1e-10, atol=1e-12)


def test_compensation_only_on_effect_shared_nodes(dependent_parallel, rng):
    plan = dependent_parallel
    models = _skill_models(plan, rng, (4, 4, 4, 4, 4))
    models["mu2"] = TransformConstraintFactor(
        admissible=[np.array([0.0, 0.4, 1.0, 0.0])]
    )
    x = rng.normal(size=plan.total_dim)
    t, sigma = 0.4, 0.3
    out = compose_scores(plan, models, x, t, sigma)

    ref = np.zeros_like(x)
    for sk in plan.skills:
        vals = plan.gather(x, sk.member_order)
        eps = models[sk.id].eval(vals, t, sigma)
        for node_id, e in zip(sk.member_order, eps):
            ref[plan.layout[node_id]] += e
    mu2 = plan.external_constraints[0]
    eps = models["mu2"].eval(plan.gather(x, mu2.members), t, sigma)
    for node_id, e in zip(mu2.members, eps):
        ref[plan.layout[node_id]] += mu2.weight * e
    # compensation lands on P1 only; P0 is precondition-only fan-out
    sl = plan.layout["P1"]
    for sk in plan.skills:
        slot = sk.member_order.index("P1")
        (e,) = models[sk.id].marginal_eval((slot,), [x[sl]], t, sigma)
        ref[sl] -= 0.5 * e
    np.testing.assert_allclose(out, ref, rtol=1e-10, atol=1e-12)


def test_compose_batched_matches_rows(linear_chain, rng):
    plan = linear_chain
    models = _skill_models(plan, rng, (2, 1, 2))
    X = rng.normal(size=(6, plan.total_dim))
    batched = compose_scores(plan, models, X, 0.5, 0.2)
    rows = np.stack([compose_scores(plan, models, X[i], 0.5, 0.2) for i in range(6)])
    np.testing.assert_allclose(batched, rows)


def test_active_spatial_factors_deduplicates():
    from factorplan import parse_skeleton

    doc = """
[nodes]
A object pose2d 4
B object pose2d 4

[factors]
f reachable state=0 members=A center=0,0 radius=1
g reachable state=1 members=B center=0,0 radius=1
"""
    plan = parse_skeleton(doc)
    ids = [s.id for s in active_spatial_factors(plan)]
    assert ids == ["f"]  # no skills, single state, g never activates

import numpy as np
import pytest

from factorplan import (
    GaussianFactor,
    GaussianMixtureFactor,
    ReachabilityFactor,
    TransformConstraintFactor,
    composed_gaussian_moments,
    constraint_eps,
    gaussian_eps,
    parse_skeleton,
    pose_distance,
)
from factorplan.factors import compose_pose2d, rel_pose2d
from factorplan.scores import ConfigurationError


def _unit_pose(rng):
    p = rng.normal(size=4)
    p[2:] /= np.linalg.norm(p[2:])
    return p


# ---------------------------------------------------------------- Gaussians


def test_gaussian_eps_worked_value():
    g = GaussianFactor(mean=[0.0], cov=[[1.0]])
    eps = gaussian_eps(g, np.array([2.0]), t=0.5, sigma=1.0)
    np.testing.assert_allclose(eps, [1.0])


def test_gaussian_eps_matches_numeric_gradient(rng):
    d = 3
    A = rng.normal(size=(d, d))
    cov = A @ A.T + 0.5 * np.eye(d)
    mean = rng.normal(size=d)
    g = GaussianFactor(mean, cov)
    sigma = 0.37
    x = rng.normal(size=d)

    noised = cov + sigma**2 * np.eye(d)

    def nll(y):
        diff = y - mean
        return 0.5 * diff @ np.linalg.solve(noised, diff)

    h = 1e-6
    num = np.array([
        (nll(x + h * e) - nll(x - h * e)) / (2 * h) for e in np.eye(d)
    ])
    np.testing.assert_allclose(g.eps(x, sigma), sigma * num, rtol=1e-5, atol=1e-8)


def test_gaussian_eps_batch_and_per_sample_sigma(rng):
    g = GaussianFactor([0.0, 1.0], np.diag([1.0, 4.0]))
    x = rng.normal(size=(5, 2))
    sigma = np.abs(rng.normal(size=5)) + 0.1
    batched = g.eps(x, sigma)
    rows = np.stack([g.eps(x[i], float(sigma[i])) for i in range(5)])
    np.testing.assert_allclose(batched, rows)


def test_gaussian_marginal_matches_submatrix():
    mean = np.arange(5.0)
    A = np.random.default_rng(3).normal(size=(5, 5))
    cov = A @ A.T + np.eye(5)
    g = GaussianFactor(mean, cov, member_dims=(2, 1, 2))
    m = g.marginal((0, 2))
    np.testing.assert_allclose(m.mean, mean[[0, 1, 3, 4]])
    np.testing.assert_allclose(m.cov, cov[np.ix_([0, 1, 3, 4], [0, 1, 3, 4])])
    x = np.array([0.3, -0.2, 1.1, 0.0])
    out = g.marginal_eval((0, 2), [x[:2], x[2:]], 0.5, 0.2)
    np.testing.assert_allclose(np.concatenate(out), m.eps(x, 0.2))


def test_gaussian_rejects_indefinite_cov():
    with pytest.raises(ConfigurationError):
        GaussianFactor([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])


def test_mixture_eps_matches_numeric_gradient(rng):
    means = np.array([[-1.0, 0.0], [2.0, 1.0], [0.0, -2.0]])
    cov = np.diag([0.3, 0.5])
    w = np.array([0.2, 0.5, 0.3])
    gm = GaussianMixtureFactor(means, cov, weights=w)
    sigma = 0.6
    x = rng.normal(size=2)

    noised = cov + sigma**2 * np.eye(2)

    def nll(y):
        dens = 0.0
        for wk, mu in zip(w, means):
            diff = y - mu
            dens += wk * np.exp(-0.5 * diff @ np.linalg.solve(noised, diff))
        return -np.log(dens)

    h = 1e-6
    num = np.array([(nll(x + h * e) - nll(x - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(gm.eps(x, sigma), sigma * num, rtol=1e-5, atol=1e-8)


def test_mixture_collapses_to_component_near_mode():
    means = np.array([[-5.0], [5.0]])
    gm = GaussianMixtureFactor(means, np.array([[1.0]]))
    g = GaussianFactor([5.0], [[1.0]])
    x = np.array([5.3])
    np.testing.assert_allclose(gm.eps(x, 0.1), g.eps(x, 0.1), atol=1e-8)


# ------------------------------------------------------------ pose distance


def test_pose_distance_translation_only():
    a = np.array([0.0, 0.0, 1.0, 0.0])
    b = np.array([1.0, 0.0, 1.0, 0.0])
    assert pose_distance(a, b) == pytest.approx(1.0)


def test_pose_distance_quarter_turn():
    a = np.array([0.0, 0.0, 1.0, 0.0])
    b = np.array([0.0, 0.0, 0.0, 1.0])
    assert pose_distance(a, b) == pytest.approx(np.pi / 2)
    assert pose_distance(a, b, w_rot=0.5) == pytest.approx(np.pi / 4)


def test_pose_distance_wraps():
    a = np.array([0.0, 0.0, np.cos(3.0), np.sin(3.0)])
    b = np.array([0.0, 0.0, np.cos(-3.0), np.sin(-3.0)])
    assert pose_distance(a, b) == pytest.approx(2 * np.pi - 6.0)


def test_pose_distance_pose3d_half_turn():
    a = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    b = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])  # 180 deg about x
    assert pose_distance(a, b) == pytest.approx(np.pi)
    # q and -q describe the same rotation
    assert pose_distance(a, -0.0 + a * np.array([1, 1, 1, -1, 1, 1, 1])) == pytest.approx(0.0)


def test_pose_distance_warns_off_manifold():
    a = np.array([0.0, 0.0, 2.0, 0.0])
    b = np.array([0.0, 0.0, 1.0, 0.0])
    with pytest.warns(RuntimeWarning):
        d = pose_distance(a, b)
    assert d == pytest.approx(0.0)


def test_rel_compose_round_trip(rng):
    for _ in range(10):
        a, b = _unit_pose(rng), _unit_pose(rng)
        rel = rel_pose2d(a, b)
        np.testing.assert_allclose(compose_pose2d(a, rel), b, atol=1e-12)


# ----------------------------------------------------- transform constraint


def test_constraint_eps_descends_distance():
    # admissible offset is 0.4 ahead of A along +y of A's frame; B sits at 0.6
    f = TransformConstraintFactor(admissible=[np.array([0.0, 0.4, 1.0, 0.0])])
    xA = np.array([0.0, 0.0, 1.0, 0.0])
    xB = np.array([0.0, 0.6, 1.0, 0.0])
    epsA, epsB = constraint_eps(f, xA, xB, t=0.3)
    # subtractive sampler moves along -eps: B toward A, A toward B
    assert epsB[1] > 0
    assert epsA[1] < 0
    step = 1e-3
    d0 = f.residual(xA, xB)
    d1 = f.residual(xA - step * epsA, xB - step * epsB)
    assert d1 < d0


def test_constraint_gradient_matches_numeric(rng):
    f = TransformConstraintFactor(
        admissible=[np.array([0.1, 0.3, np.cos(0.4), np.sin(0.4)])], w_rot=0.7
    )
    for _ in range(10):
        xA, xB = _unit_pose(rng), _unit_pose(rng)
        rel = rel_pose2d(xA, xB)
        h = f.nearest(rel)

        def dist(a, b):
            return pose_distance(rel_pose2d(a, b), h, f.w_rot)

        gA, gB = f.eval([xA, xB], 0.0, 0.0)
        eps = 1e-6
        for g, x, other, order in ((gA, xA, xB, "A"), (gB, xB, xA, "B")):
            num = np.zeros(4)
            for i in range(4):
                dx = np.zeros(4)
                dx[i] = eps
                if order == "A":
                    num[i] = (dist(x + dx, other) - dist(x - dx, other)) / (2 * eps)
                else:
                    num[i] = (dist(other, x + dx) - dist(other, x - dx)) / (2 * eps)
            np.testing.assert_allclose(g, num, rtol=1e-4, atol=1e-6)


def test_constraint_zero_at_satisfaction():
    h = np.array([0.2, 0.0, 1.0, 0.0])
    f = TransformConstraintFactor(admissible=[h])
    xA = np.array([0.0, 0.0, 1.0, 0.0])
    xB = np.array([0.2, 0.0, 1.0, 0.0])
    assert f.residual(xA, xB) == pytest.approx(0.0, abs=1e-12)
    epsA, epsB = f.eval([xA, xB], 0.0, 0.0)
    np.testing.assert_allclose(epsA, 0.0, atol=1e-9)
    np.testing.assert_allclose(epsB, 0.0, atol=1e-9)


def test_constraint_nearest_picks_closest_member():
    f = TransformConstraintFactor(
        admissible=[np.array([1.0, 0.0, 1.0, 0.0]), np.array([-1.0, 0.0, 1.0, 0.0])]
    )
    np.testing.assert_allclose(
        f.nearest(np.array([0.8, 0.0, 1.0, 0.0])), [1.0, 0.0, 1.0, 0.0]
    )
    np.testing.assert_allclose(
        f.nearest(np.array([-0.8, 0.0, 1.0, 0.0])), [-1.0, 0.0, 1.0, 0.0]
    )


def test_constraint_axis_range_family():
    fam = ("axis_range", [1.0, 0.0, -0.5, 0.5, 1.0, 0.0])
    f = TransformConstraintFactor(family=fam)
    xA = np.array([0.0, 0.0, 1.0, 0.0])
    # inside the range: satisfied
    xB = np.array([0.3, 0.0, 1.0, 0.0])
    assert f.residual(xA, xB) == pytest.approx(0.0, abs=1e-12)
    # beyond the range end: distance to the clamped endpoint
    xB = np.array([0.9, 0.0, 1.0, 0.0])
    assert f.residual(xA, xB) == pytest.approx(0.4)


def test_constraint_weight_scales_eps():
    f1 = TransformConstraintFactor(admissible=[np.array([0.0, 0.4, 1.0, 0.0])])
    f2 = TransformConstraintFactor(
        admissible=[np.array([0.0, 0.4, 1.0, 0.0])], weight=3.0
    )
    xA = np.array([0.0, 0.0, 1.0, 0.0])
    xB = np.array([0.3, 0.9, 1.0, 0.0])
    a1, b1 = f1.eval([xA, xB], 0.0, 0.0)
    a2, b2 = f2.eval([xA, xB], 0.0, 0.0)
    np.testing.assert_allclose(a2, 3.0 * a1)
    np.testing.assert_allclose(b2, 3.0 * b1)


# ------------------------------------------------------------- reachability


def test_reachability_zero_inside_disc():
    f = ReachabilityFactor(center=[0.0, 0.0], radius=0.5)
    (eps,) = f.eval([np.array([0.3, 0.2, 1.0, 0.0])], 0.0, 0.0)
    np.testing.assert_allclose(eps, 0.0)
    assert f.residual(np.array([0.3, 0.2, 1.0, 0.0])) == pytest.approx(0.0)


def test_reachability_unit_gradient_outside():
    f = ReachabilityFactor(center=[0.0, 0.0], radius=0.5)
    x = np.array([1.0, 0.0, 1.0, 0.0])
    (eps,) = f.eval([x], 0.0, 0.0)
    np.testing.assert_allclose(eps, [1.0, 0.0, 0.0, 0.0])
    assert f.residual(x) == pytest.approx(0.5)


# --------------------------------------------------------- composed moments


def test_composed_moments_product_of_two_gaussians():
    doc = """
[nodes]
O0 object raw 1

[factors]
f1 gaussian state=0 members=O0 mean=0.0 cov=1.0
f2 gaussian state=0 members=O0 mean=2.0 cov=1.0
"""
    plan = parse_skeleton(doc)
    models = {
        "f1": GaussianFactor([0.0], [[1.0]]),
        "f2": GaussianFactor([2.0], [[1.0]]),
    }
    mean, cov = composed_gaussian_moments(plan, models)
    np.testing.assert_allclose(mean, [1.0])
    np.testing.assert_allclose(cov, [[0.5]])


def test_composed_moments_weight_scales_precision():
    doc = """
[nodes]
O0 object raw 1

[factors]
f1 gaussian state=0 members=O0 mean=0.0 cov=1.0 weight=4
"""
    plan = parse_skeleton(doc)
    mean, cov = composed_gaussian_moments(plan, {"f1": GaussianFactor([0.0], [[1.0]])})
    np.testing.assert_allclose(cov, [[0.25]])


def test_composed_moments_chain_with_compensation(linear_chain, rng):
    plan = linear_chain
    models = {}
    for sk in plan.skills:
        A = rng.normal(size=(5, 5))
        models[sk.id] = GaussianFactor(
            rng.normal(size=5), A @ A.T + np.eye(5), member_dims=(2, 1, 2)
        )
    mean, cov = composed_gaussian_moments(plan, models)
    # brute-force: same precision algebra built directly in dense form
    D = plan.total_dim
    P = np.zeros((D, D))
    eta = np.zeros(D)
    for sk in plan.skills:
        g = models[sk.id]
        idx = np.concatenate(
            [np.arange(sl.start, sl.stop) for sl in plan.slices_of(sk.member_order)]
        )
        Pi = np.linalg.inv(g.cov)
        P[np.ix_(idx, idx)] += Pi
        eta[idx] += Pi @ g.mean
    sl = plan.layout["O1"]
    for sk in plan.skills:
        g = models[sk.id]
        slot = sk.member_order.index("O1")
        m = g.marginal((slot,))
        Pi = np.linalg.inv(m.cov)
        P[sl, sl] -= 0.5 * Pi
        eta[np.arange(sl.start, sl.stop)] -= 0.5 * (Pi @ m.mean)
    ref_cov = np.linalg.inv(P)
    np.testing.assert_allclose(cov, ref_cov, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(mean, ref_cov @ eta, rtol=1e-7, atol=1e-9)


def test_composed_moments_not_normalizable():
    # no factor touches O1, so the composed precision has a zero block
    doc = """
[nodes]
O0 object raw 1
O1 object raw 1

[factors]
f1 gaussian state=0 members=O0 mean=0.0 cov=1.0
"""
    plan = parse_skeleton(doc)
    with pytest.raises(ConfigurationError, match="not normalizable"):
        composed_gaussian_moments(plan, {"f1": GaussianFactor([0.0], [[1.0]])})


def test_composed_moments_requires_gaussian_models(linear_chain):
    with pytest.raises(ConfigurationError):
        composed_gaussian_moments(linear_chain, {})

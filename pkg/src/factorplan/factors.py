"""Closed-form score models: Gaussians, transform constraints, reachability,
Gaussian mixtures, and the exact Gaussian composition oracle.

All factors are immutable and freely shareable across sampler workers.
"""

from __future__ import annotations

import warnings

import numpy as np

from .graph import FactorKind, PlanGraph
from .scores import ConfigurationError, ScoreModel

__all__ = [
    "GaussianFactor",
    "GaussianMixtureFactor",
    "TransformConstraintFactor",
    "ReachabilityFactor",
    "gaussian_eps",
    "pose_distance",
    "constraint_eps",
    "composed_gaussian_moments",
    "rel_pose2d",
    "compose_pose2d",
]


def _split(x: np.ndarray, dims: tuple[int, ...]) -> list[np.ndarray]:
    out, off = [], 0
    for d in dims:
        out.append(x[..., off:off + d])
        off += d
    return out


class GaussianFactor(ScoreModel):
    """Exact noise prediction for a sigma-noised multivariate Gaussian.

    eps(x, t) = sigma * (Sigma + sigma^2 I)^-1 (x - mu), computed through the
    eigendecomposition of Sigma so per-sample sigmas vectorize.
    """

    def __init__(self, mean, cov, member_dims: tuple[int, ...] | None = None):
        self.mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            cov = np.diag(cov)
        self.cov = cov
        d = self.mean.shape[0]
        if cov.shape != (d, d):
            raise ConfigurationError(f"cov shape {cov.shape} != ({d}, {d})")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ConfigurationError("covariance must be positive definite") from None
        self._evals, self._evecs = np.linalg.eigh(cov)
        self.member_dims = tuple(member_dims) if member_dims else (d,)
        if sum(self.member_dims) != d:
            raise ConfigurationError("member_dims must sum to the Gaussian dim")
        self._offsets = np.cumsum((0,) + self.member_dims)

    def eps(self, x: np.ndarray, sigma) -> np.ndarray:
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim:  # per-sample sigma, broadcast against the batch axis
            sigma = sigma[..., None]
        y = (np.asarray(x, dtype=float) - self.mean) @ self._evecs
        return sigma * ((y / (self._evals + sigma**2)) @ self._evecs.T)

    def eval(self, values, t, sigma):
        x = np.concatenate(values, axis=-1)
        return _split(self.eps(x, sigma), self.member_dims)

    def marginal(self, subset: tuple[int, ...]) -> "GaussianFactor":
        """Closed-form Gaussian marginal over a slot subset."""
        idx = np.concatenate(
            [np.arange(self._offsets[i], self._offsets[i + 1]) for i in subset]
        )
        return GaussianFactor(
            self.mean[idx],
            self.cov[np.ix_(idx, idx)],
            tuple(self.member_dims[i] for i in subset),
        )

    def marginal_eval(self, subset, values, t, sigma):
        return self.marginal(tuple(subset)).eval(values, t, sigma)


def gaussian_eps(factor: GaussianFactor, x: np.ndarray, t: float,
                 sigma: float) -> np.ndarray:
    """Noise prediction of a Gaussian factor at noise level sigma(t)."""
    return factor.eps(x, sigma)


class GaussianMixtureFactor(ScoreModel):
    """Equal-covariance Gaussian mixture; exact annealed noise prediction.

    The sigma-noised mixture keeps its weights, with each component's
    covariance inflated by sigma^2 I. eps = -sigma * grad log p_sigma.
    """

    def __init__(self, means, cov, weights=None, member_dims=None):
        self.means = np.asarray(means, dtype=float)  # (M, d)
        if self.means.ndim != 2:
            raise ConfigurationError("means must be (n_components, dim)")
        M, d = self.means.shape
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(d)
        elif cov.ndim == 1:
            cov = np.diag(cov)
        self.cov = cov
        np.linalg.cholesky(cov)
        self._evals, self._evecs = np.linalg.eigh(cov)
        w = np.full(M, 1.0 / M) if weights is None else np.asarray(weights, float)
        self.weights = w / w.sum()
        self.member_dims = tuple(member_dims) if member_dims else (d,)
        if sum(self.member_dims) != d:
            raise ConfigurationError("member_dims must sum to the mixture dim")

    def eps(self, x: np.ndarray, sigma: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        diff = x[..., None, :] - self.means  # (..., M, d)
        y = diff @ self._evecs
        denom = self._evals + sigma**2
        maha = np.sum(y**2 / denom, axis=-1)  # (..., M)
        logw = np.log(self.weights) - 0.5 * maha
        logw -= logw.max(axis=-1, keepdims=True)
        r = np.exp(logw)
        r /= r.sum(axis=-1, keepdims=True)
        comp_eps = sigma * ((y / denom) @ self._evecs.T)  # (..., M, d)
        return np.sum(r[..., None] * comp_eps, axis=-2)

    def eval(self, values, t, sigma):
        x = np.concatenate(values, axis=-1)
        return _split(self.eps(x, float(sigma)), self.member_dims)


def _norm_rot2d(c, s):
    n = np.hypot(c, s)
    return c / n, s / n, n


def _check_rot_norm(block: np.ndarray, what: str) -> None:
    dev = np.abs(np.linalg.norm(block, axis=-1) - 1.0)
    if np.any(dev > 1e-3):
        warnings.warn(
            f"{what}: rotation components off the unit manifold by "
            f"{float(np.max(dev)):.2e}; normalizing internally",
            RuntimeWarning,
            stacklevel=3,
        )


def pose_distance(T1: np.ndarray, T2: np.ndarray, w_rot: float = 1.0) -> float:
    """Cartesian distance plus weighted rotational geodesic distance.

    pose2d (x, y, cos, sin): wrapped absolute angle difference.
    pose3d (x, y, z, qw, qx, qy, qz): 2*arccos(|<q1, q2>|).
    Rotation parts are normalized internally (warns beyond 1e-3 deviation).
    """
    T1 = np.asarray(T1, dtype=float)
    T2 = np.asarray(T2, dtype=float)
    if T1.shape != T2.shape or T1.shape[-1] not in (4, 7):
        raise ValueError("poses must share a pose2d (4) or pose3d (7) layout")
    if T1.shape[-1] == 4:
        _check_rot_norm(T1[..., 2:], "pose_distance")
        _check_rot_norm(T2[..., 2:], "pose_distance")
        pos = np.linalg.norm(T1[..., :2] - T2[..., :2], axis=-1)
        c1, s1, _ = _norm_rot2d(T1[..., 2], T1[..., 3])
        c2, s2, _ = _norm_rot2d(T2[..., 2], T2[..., 3])
        ang = np.abs(np.arctan2(c1 * s2 - s1 * c2, c1 * c2 + s1 * s2))
    else:
        _check_rot_norm(T1[..., 3:], "pose_distance")
        _check_rot_norm(T2[..., 3:], "pose_distance")
        pos = np.linalg.norm(T1[..., :3] - T2[..., :3], axis=-1)
        q1 = T1[..., 3:] / np.linalg.norm(T1[..., 3:], axis=-1, keepdims=True)
        q2 = T2[..., 3:] / np.linalg.norm(T2[..., 3:], axis=-1, keepdims=True)
        dot = np.clip(np.abs(np.sum(q1 * q2, axis=-1)), 0.0, 1.0)
        ang = 2.0 * np.arccos(dot)
    out = pos + w_rot * ang
    return float(out) if out.ndim == 0 else out


def rel_pose2d(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pose of b expressed in a's frame; batched over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ca, sa, na = _norm_rot2d(a[..., 2], a[..., 3])
    d = b[..., :2] - a[..., :2]
    tx = ca * d[..., 0] + sa * d[..., 1]
    ty = -sa * d[..., 0] + ca * d[..., 1]
    cb, sb, _ = _norm_rot2d(b[..., 2], b[..., 3])
    cr = ca * cb + sa * sb
    sr = ca * sb - sa * cb
    return np.stack([tx, ty, cr, sr], axis=-1)


def compose_pose2d(a: np.ndarray, rel: np.ndarray) -> np.ndarray:
    """World pose of `rel` (expressed in a's frame) composed with pose a."""
    a = np.asarray(a, dtype=float)
    rel = np.asarray(rel, dtype=float)
    ca, sa, _ = _norm_rot2d(a[..., 2], a[..., 3])
    px = a[..., 0] + ca * rel[..., 0] - sa * rel[..., 1]
    py = a[..., 1] + sa * rel[..., 0] + ca * rel[..., 1]
    cr, sr, _ = _norm_rot2d(rel[..., 2], rel[..., 3])
    c = ca * cr - sa * sr
    s = sa * cr + ca * sr
    return np.stack([px, py, c, s], axis=-1)


class TransformConstraintFactor(ScoreModel):
    """Admissible-set constraint on the relative transform of two pose2d nodes.

    Potential: exp(-distance(transform(A, B), H_A)). The noise prediction is
    the positive distance gradient scaled by `weight`, t-independent, so the
    subtractive sampler descends the distance at every noise level. Nearest
    admissible member ties break toward the lowest index; at distance zero
    the subgradient is 0.

    `admissible` is a list of pose2d transforms; `family` may add the
    one-parameter set {t*u, rot} for t in [lo, hi] ("axis_range").
    """

    member_dims = (4, 4)

    def __init__(self, admissible=(), family=None, w_rot: float = 1.0,
                 weight: float = 1.0):
        self.admissible = [np.asarray(h, dtype=float) for h in admissible]
        self.family = family
        self.w_rot = float(w_rot)
        self.weight = float(weight)
        if not self.admissible and family is None:
            raise ConfigurationError("admissible transform set must be non-empty")
        if family is not None:
            name, vals = family
            if name != "axis_range" or len(vals) != 6:
                raise ConfigurationError(f"unknown admissible family {name!r}")

    def _family_project(self, rel: np.ndarray) -> np.ndarray | None:
        if self.family is None:
            return None
        ux, uy, lo, hi, cr, sr = self.family[1]
        u = np.array([ux, uy]) / np.hypot(ux, uy)
        tproj = np.clip(rel[..., 0] * u[0] + rel[..., 1] * u[1], lo, hi)
        out = np.empty(rel.shape)
        out[..., 0] = tproj * u[0]
        out[..., 1] = tproj * u[1]
        out[..., 2] = cr
        out[..., 3] = sr
        return out

    def nearest(self, rel: np.ndarray) -> np.ndarray:
        """Closest admissible transform to `rel` under pose_distance."""
        cands = list(self.admissible)
        fam = self._family_project(rel)
        if fam is not None:
            cands.append(fam)
        dists = np.stack(
            [pose_distance(rel, np.broadcast_to(h, rel.shape), self.w_rot)
             for h in cands], axis=-1
        )
        choice = np.argmin(dists, axis=-1)
        stacked = np.stack([np.broadcast_to(h, rel.shape) for h in cands], axis=-2)
        return np.take_along_axis(
            stacked, choice[..., None, None], axis=-2
        )[..., 0, :]

    def distance(self, xA: np.ndarray, xB: np.ndarray) -> np.ndarray:
        rel = rel_pose2d(xA, xB)
        return pose_distance(rel, self.nearest(rel), self.w_rot)

    def eval(self, values, t, sigma):
        xA, xB = values
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rel = rel_pose2d(xA, xB)
            h = self.nearest(rel)
            gA, gB = _transform_distance_grad(xA, xB, h, self.w_rot)
        return [self.weight * gA, self.weight * gB]

    def residual(self, xA, xB) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return self.distance(xA, xB)


def _transform_distance_grad(xA, xB, h, w_rot):
    """Gradient of pose_distance(rel_pose2d(A, B), h) w.r.t. A and B.

    h is held fixed (piecewise-constant nearest member). Exact away from
    nonsmooth points; zero where either term's distance vanishes.
    """
    xA = np.asarray(xA, dtype=float)
    xB = np.asarray(xB, dtype=float)
    gA = np.zeros_like(xA)
    gB = np.zeros_like(xB)

    cA, sA = xA[..., 2], xA[..., 3]
    n2 = cA**2 + sA**2
    n = np.sqrt(n2)
    d = xB[..., :2] - xA[..., :2]
    # rel position: t_rel = M^T d / n with M = [[cA, -sA], [sA, cA]]
    tx = (cA * d[..., 0] + sA * d[..., 1]) / n
    ty = (-sA * d[..., 0] + cA * d[..., 1]) / n
    gx = tx - h[..., 0]
    gy = ty - h[..., 1]
    gnorm = np.hypot(gx, gy)
    safe = gnorm > 1e-12
    ghatx = np.where(safe, gx / np.where(safe, gnorm, 1.0), 0.0)
    ghaty = np.where(safe, gy / np.where(safe, gnorm, 1.0), 0.0)

    # d(t_rel)/d(pB) = M^T / n ; d/d(pA) = -M^T / n
    gB[..., 0] = (cA * ghatx - sA * ghaty) / n
    gB[..., 1] = (sA * ghatx + cA * ghaty) / n
    gA[..., 0] = -gB[..., 0]
    gA[..., 1] = -gB[..., 1]
    # d(t_rel)/d(cA) = d / n - (cA / n^2) t_rel ; d/d(sA) = J d / n - (sA/n^2) t_rel
    dtx_dc = d[..., 0] / n - cA / n2 * tx
    dty_dc = d[..., 1] / n - cA / n2 * ty
    dtx_ds = d[..., 1] / n - sA / n2 * tx
    dty_ds = -d[..., 0] / n - sA / n2 * ty
    gA[..., 2] = ghatx * dtx_dc + ghaty * dty_dc
    gA[..., 3] = ghatx * dtx_ds + ghaty * dty_ds

    # rotation term: wrapped angle a = theta_B - theta_A - theta_h
    cB, sB = xB[..., 2], xB[..., 3]
    nB2 = cB**2 + sB**2
    crel = cA * cB + sA * sB
    srel = cA * sB - sA * cB
    ch, sh = h[..., 2], h[..., 3]
    ang = np.arctan2(crel * sh - srel * ch, crel * ch + srel * sh)
    # distance uses |theta_rel - theta_h| wrapped; d|a|/d(theta_B) = -sign(ang)
    sgn = np.where(np.abs(ang) > 1e-12, -np.sign(ang), 0.0)
    gB[..., 2] += w_rot * sgn * (-sB / nB2)
    gB[..., 3] += w_rot * sgn * (cB / nB2)
    gA[..., 2] += -w_rot * sgn * (-sA / n2)
    gA[..., 3] += -w_rot * sgn * (cA / n2)
    return gA, gB


def constraint_eps(factor: TransformConstraintFactor, xA: np.ndarray,
                   xB: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Constraint noise prediction for both member poses."""
    gA, gB = factor.eval([np.asarray(xA, float), np.asarray(xB, float)], t, 0.0)
    return gA, gB


class ReachabilityFactor(ScoreModel):
    """Soft disc potential keeping a pose node's position within reach.

    Potential exp(-hinge(|p - center| - radius)); eps is the positive hinge
    gradient on the position components, zero inside the disc.
    """

    member_dims = (4,)

    def __init__(self, center, radius: float, weight: float = 1.0):
        self.center = np.asarray(center, dtype=float)
        if radius <= 0:
            raise ConfigurationError("reach radius must be positive")
        self.radius = float(radius)
        self.weight = float(weight)

    def eval(self, values, t, sigma):
        (x,) = values
        d = x[..., :2] - self.center
        dist = np.linalg.norm(d, axis=-1, keepdims=True)
        outside = dist > self.radius
        grad = np.where(outside & (dist > 1e-12), d / np.maximum(dist, 1e-12), 0.0)
        out = np.zeros_like(x)
        out[..., :2] = self.weight * grad
        return [out]

    def residual(self, x) -> np.ndarray:
        d = np.linalg.norm(x[..., :2] - self.center, axis=-1)
        return np.maximum(d - self.radius, 0.0)


def composed_gaussian_moments(
    plan: PlanGraph, models: dict[str, ScoreModel]
) -> tuple[np.ndarray, np.ndarray]:
    """Exact moments of an all-Gaussian plan composition.

    Density proportional to prod(factor Gaussians) / sqrt(prod(marginals)):
    precision matrices and precision-weighted means accumulate with +1
    (numerator, scaled by factor weight) and -1/2 (each shared-node marginal)
    coefficients into the flattened layout. Raises if the composed precision
    is not positive definite (composition not normalizable).
    """
    D = plan.total_dim
    precision = np.zeros((D, D))
    eta = np.zeros(D)

    def accumulate(gauss: GaussianFactor, member_ids, coeff):
        idx = np.concatenate([np.arange(sl.start, sl.stop)
                              for sl in plan.slices_of(member_ids)])
        P = np.linalg.inv(gauss.cov)
        precision[np.ix_(idx, idx)] += coeff * P
        eta[idx] += coeff * (P @ gauss.mean)

    def require_gaussian(model, what) -> GaussianFactor:
        if not isinstance(model, GaussianFactor):
            raise ConfigurationError(f"{what} is not a Gaussian factor")
        return model

    from .scores import active_spatial_factors

    for sk in plan.skills:
        g = require_gaussian(models.get(sk.id), f"skill {sk.id}")
        accumulate(g, sk.member_order, 1.0)
    for spec in active_spatial_factors(plan) + list(plan.external_constraints):
        if spec.weight == 0.0:
            continue
        g = require_gaussian(models.get(spec.id), f"factor {spec.id}")
        accumulate(g, spec.members, spec.weight)
    for node_id, (sk_a, sk_b) in plan.shared_nodes().items():
        for sk in (sk_a, sk_b):
            g = require_gaussian(models.get(sk.id), f"skill {sk.id}")
            slot = sk.member_order.index(node_id)
            accumulate(g.marginal((slot,)), (node_id,), -0.5)

    evals = np.linalg.eigvalsh(precision)
    if evals.min() <= 0:
        raise ConfigurationError(
            "composition is not normalizable: composed precision is not PD"
        )
    cov = np.linalg.inv(precision)
    cov = 0.5 * (cov + cov.T)
    return cov @ eta, cov


def build_factor_model(spec, member_dims: tuple[int, ...] | None = None) -> ScoreModel:
    """Construct the analytic score model implied by a parsed factor spec."""
    p = spec.params
    if spec.kind is FactorKind.GAUSSIAN:
        return GaussianFactor(p["mean"], p["cov"], member_dims)
    if spec.kind in (FactorKind.FIXED_TRANSFORM, FactorKind.ALIGNED):
        return TransformConstraintFactor(
            admissible=p.get("admissible", ()),
            family=p.get("family"),
            w_rot=p.get("w_rot", 1.0),
        )
    if spec.kind is FactorKind.REACHABLE:
        return ReachabilityFactor(p["center"], p["radius"])
    raise ConfigurationError(
        f"no analytic model for factor {spec.id!r} of kind {spec.kind.value}"
    )

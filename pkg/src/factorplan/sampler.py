"""Forward noising, the DSM objective, and the reverse-diffusion plan sampler.

The reverse integrator is the fixed-step Euler discretization of the
reverse-time variance-exploding diffusion,

    x <- x - 2*sigma_dot*eps*dt + sqrt(2*sigma*sigma_dot*dt) * z,

whose noise injection makes the sampler self-correcting: with exact scores it
recovers the target distribution from the N(0, sigma(1)^2 I) prior at the
default 50 steps. The sign is pinned by the single-Gaussian recovery
invariant (eps is the noise prediction, score = -eps/sigma).

Composed (product-of-factors) scores do not follow the single-density
diffusion evolution exactly, which biases a plain one-step-per-level
integration; each level therefore runs a few equilibration sub-steps of the
same fixed-step form at the current noise level (cfg.equilibration, default
2) so the samples relax onto the composed density.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .graph import GoalCondition, PlanGraph, project_rotations
from .schedule import NoiseSchedule
from .scores import ContractError, ScoreModel, compose_scores

__all__ = [
    "Projection",
    "SamplerConfig",
    "CandidatePlan",
    "SamplerDivergence",
    "forward_noise",
    "dsm_loss",
    "reverse_sample",
    "rank_candidates",
]


class Projection(str, enum.Enum):
    NONE = "none"
    ROTATION_RENORMALIZE = "rotation_renormalize"


class SamplerDivergence(Exception):
    def __init__(self, step: int, candidate: int):
        super().__init__(
            f"non-finite values at reverse step {step} for candidate {candidate}; "
            f"inspect factor contributions at this step"
        )
        self.step = step
        self.candidate = candidate


@dataclass(frozen=True)
class SamplerConfig:
    num_candidates: int = 10
    top_k: int = 5
    T_steps: int = 50
    seed: int = 0
    projection: Projection = Projection.ROTATION_RENORMALIZE
    max_retries: int = 3
    equilibration: int = 2  # extra same-level sub-steps per reverse step

    def __post_init__(self):
        if not (1 <= self.top_k <= self.num_candidates):
            raise ValueError("need 1 <= top_k <= num_candidates")
        if self.equilibration < 0:
            raise ValueError("equilibration must be >= 0")


@dataclass
class CandidatePlan:
    index: int
    values: np.ndarray  # denormalized full decision vector
    normalized: np.ndarray  # raw sampler output
    goal_residual: float
    per_factor_residuals: dict[str, float] = field(default_factory=dict)
    diverged: bool = False

    def node_values(self, plan: PlanGraph) -> dict[str, np.ndarray]:
        return {n: self.values[sl] for n, sl in plan.layout.items()}


def forward_noise(x0: np.ndarray, t: float, rng: np.random.Generator,
                  schedule: NoiseSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Forward-diffuse clean data: x_t = x0 + sigma(t) * eps."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    x0 = np.asarray(x0, dtype=float)
    eps = rng.standard_normal(x0.shape)
    return x0 + schedule.sigma(t) * eps, eps


def dsm_loss(model: ScoreModel, batch: list[np.ndarray], rng: np.random.Generator,
             schedule: NoiseSchedule) -> float:
    """Denoising score-matching loss on a batch of per-slot clean samples.

    `batch[i]` has shape (B, member_dims[i]). Draws t ~ U[0,1] per sample,
    noises every slot with the same per-sample sigma, and returns the batch
    mean of ||eps - model(x_t, t)||^2 (lambda(t) = 1).
    """
    model.check_slots(batch)
    B = batch[0].shape[0]
    t = rng.uniform(0.0, 1.0, size=B)
    sigma = schedule.sigma_min * np.exp(schedule.log_ratio * t)
    noised, eps_true = [], []
    for x0 in batch:
        eps = rng.standard_normal(x0.shape)
        noised.append(x0 + sigma[:, None] * eps)
        eps_true.append(eps)
    pred = model.eval(noised, t, sigma)
    sq = 0.0
    for e_true, e_pred in zip(eps_true, pred):
        if e_pred.shape != e_true.shape:
            raise ContractError("model output shape mismatch in dsm_loss")
        sq = sq + np.sum((e_true - e_pred) ** 2, axis=-1)
    return float(np.mean(sq))


def _candidate_noise(seed: int, n: int, shape: tuple[int, ...],
                     generation: int = 0) -> np.ndarray:
    """Independent noise tensor per candidate, from named per-candidate streams."""
    root = np.random.SeedSequence(entropy=(seed, generation))
    out = np.empty((n, *shape))
    for i, child in enumerate(root.spawn(n)):
        out[i] = np.random.default_rng(child).standard_normal(shape)
    return out


def reverse_sample(
    plan: PlanGraph,
    models: dict[str, ScoreModel],
    schedule: NoiseSchedule,
    cfg: SamplerConfig,
    denormalize=None,
    goal: GoalCondition | None = None,
) -> list[CandidatePlan]:
    """Draw candidate plans by reverse diffusion and return the top_k, sorted.

    Each candidate owns an RNG stream derived from (seed, candidate index), so
    a fixed seed and plan reproduce the candidate list bit-identically.
    Divergent candidates (non-finite values) are resampled up to
    cfg.max_retries times with fresh streams, then reported with diverged=True
    and infinite residual, ranked last.
    """
    from .residuals import goal_residuals  # local import; residuals need factors

    goal = plan.goal if goal is None else goal
    D = plan.total_dim
    T = cfg.T_steps
    dt = 1.0 / T

    def integrate(n: int, generation: int) -> np.ndarray:
        n_draws = 1 + T * (1 + cfg.equilibration)
        noise = _candidate_noise(cfg.seed, n, (n_draws, D), generation)
        x = schedule.sigma(1.0) * noise[:, 0, :]
        t = 1.0
        draw = 1

        def euler_step(x, t_level, drift_scale):
            # drift_scale 2.0: reverse-SDE step (transport + relax);
            # drift_scale 1.0: pure same-level relaxation sub-step.
            nonlocal draw
            sigma = schedule.sigma(t_level)
            sigma_dot = schedule.sigma_dot(t_level)
            eps = compose_scores(plan, models, x, t_level, sigma)
            x = (
                x
                - drift_scale * sigma_dot * eps * dt
                + np.sqrt(2.0 * sigma * sigma_dot * dt) * noise[:, draw, :]
            )
            draw += 1
            if cfg.projection is Projection.ROTATION_RENORMALIZE:
                x = project_rotations(plan, x)
            return x

        for step in range(T):
            x = euler_step(x, t, 2.0)
            t -= dt
            for _ in range(cfg.equilibration):
                x = euler_step(x, max(t, 0.0), 1.0)
        return x

    x = integrate(cfg.num_candidates, generation=0)
    bad = ~np.isfinite(x).all(axis=-1)
    for retry in range(1, cfg.max_retries + 1):
        if not bad.any():
            break
        fresh = integrate(cfg.num_candidates, generation=retry)
        x[bad] = fresh[bad]
        bad = ~np.isfinite(x).all(axis=-1)

    candidates = []
    for i in range(cfg.num_candidates):
        xi = x[i]
        diverged = bool(bad[i])
        values = xi if denormalize is None else denormalize(xi)
        if diverged:
            candidates.append(
                CandidatePlan(i, np.nan_to_num(values), xi, float("inf"),
                              {}, diverged=True)
            )
            continue
        per_factor, total = goal_residuals(plan, goal, xi)
        candidates.append(CandidatePlan(i, values, xi, total, per_factor))
    return rank_candidates(candidates, goal)[: cfg.top_k]


def rank_candidates(cands: list[CandidatePlan],
                    goal: GoalCondition) -> list[CandidatePlan]:
    """Ascending by goal residual; ties broken by candidate index."""
    return sorted(cands, key=lambda c: (c.goal_residual, c.index))

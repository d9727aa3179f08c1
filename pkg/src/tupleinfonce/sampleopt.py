"""Bilevel optimisation of the negative mixture and the augmentation.

Each hyper-parameter vector has an isotropic Gaussian search distribution.
Every epoch one of them (alpha on even epochs, beta on odd ones, counting
from 1) proposes candidates; each candidate trains a branch of the current
encoder for one epoch, the branch is scored, the distribution mean takes a
REINFORCE step and training continues from the best-scoring branch.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .contrastive import NegativeMix
from .crosseval import beta_reward_value, evaluate_crossmodal, zeta_star_search
from .rng import CANDIDATES, child_seed, substream
from .synthgen import AugmentParams, TupleBatch, ValidationSet
from .training import Learner, TrainConfig, train_epoch

__all__ = [
    "CandidateFailure",
    "EpochRecord",
    "HyperDist",
    "LoopConfig",
    "RewardError",
    "RewardTrace",
    "optimize_plugin",
    "reinforce_update",
    "run_alternating",
    "sample_candidates",
]

log = logging.getLogger(__name__)


class RewardError(ValueError):
    """Raised when a REINFORCE step is handed non-finite rewards."""


class CandidateFailure(RuntimeError):
    """Every candidate of an epoch diverged, so there is no branch to continue from."""


@dataclass(frozen=True, eq=False)
class HyperDist:
    """``N(mean, sigma^2 I)`` over a hyper-parameter vector.

    Draws are clipped into ``[lower, upper]`` before use; ``upper=None``
    means unbounded above. With ``scale`` set the search runs in units of
    ``scale`` and :meth:`values` maps a clipped draw back to real units.
    """

    mean: np.ndarray
    sigma: float = 0.1
    lr: float = 0.05
    n_candidates: int = 4
    target: str = "alpha"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    baseline: bool = False
    scale: np.ndarray | None = None

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "mean", mean)
        for name in ("lower", "upper", "scale"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.broadcast_to(np.asarray(v, dtype=np.float64), mean.shape).copy())
        if not np.all(np.isfinite(mean)):
            raise ValueError("distribution mean must be finite")
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (self.lr > 0 and np.isfinite(self.lr)):
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.n_candidates < 1:
            raise ValueError("need at least one candidate per epoch")
        if self.target not in ("alpha", "beta"):
            raise ValueError(f"target must be 'alpha' or 'beta', got {self.target!r}")

    @classmethod
    def for_alpha(cls, K: int, mean=None, **kw) -> "HyperDist":
        mean = np.full(K + 1, 1.0 / (K + 1)) if mean is None else mean
        return cls(mean, target="alpha", lower=np.zeros(K + 1), **kw)

    @classmethod
    def for_beta(cls, beta_max, mean=None, **kw) -> "HyperDist":
        """Search over ``beta / beta_max`` in ``[0, 1]``; ``mean`` is given in real units."""
        beta_max = np.asarray(beta_max, dtype=np.float64)
        if mean is None:
            frac = np.full(beta_max.shape, 0.25)
        else:
            mean = np.asarray(mean, dtype=np.float64)
            frac = np.divide(mean, beta_max, out=np.zeros_like(beta_max), where=beta_max > 0)
        return cls(frac, target="beta", lower=np.zeros_like(beta_max), upper=np.ones_like(beta_max), scale=beta_max, **kw)

    def clip(self, x: np.ndarray) -> np.ndarray:
        lo = -np.inf if self.lower is None else self.lower
        hi = np.inf if self.upper is None else self.upper
        return np.clip(x, lo, hi)

    def values(self, x: np.ndarray) -> np.ndarray:
        """Map search coordinates to hyper-parameter values."""
        return x if self.scale is None else x * self.scale

    def with_mean(self, mean) -> "HyperDist":
        return replace(self, mean=np.asarray(mean, dtype=np.float64))


def sample_candidates(dist: HyperDist, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``B`` i.i.d. draws; returns ``(raw, clipped)``, each of shape ``(B, d)``."""
    raw = dist.mean + dist.sigma * rng.standard_normal((dist.n_candidates, dist.mean.size))
    return raw, dist.clip(raw)


def reinforce_update(dist: HyperDist, raw: np.ndarray, rewards) -> np.ndarray:
    """Score-function step ``mu + lr * mean_i R_i (x_i - mu) / sigma^2``.

    With ``dist.baseline`` the batch-mean reward is subtracted first.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if raw.shape[0] != rewards.size:
        raise ValueError(f"{raw.shape[0]} candidates but {rewards.size} rewards")
    if not np.all(np.isfinite(rewards)):
        raise RewardError(f"non-finite rewards: {rewards.tolist()}")
    if rewards.size == 0:
        return dist.mean.copy()
    if dist.baseline:
        rewards = rewards - rewards.mean()
    grad = (rewards[:, None] * (raw - dist.mean)).mean(axis=0) / dist.sigma**2
    return dist.mean + dist.lr * grad


def optimize_plugin(
    dist: HyperDist, reward: Callable[[np.ndarray], float], epochs: int, rng: np.random.Generator
) -> np.ndarray:
    """Run REINFORCE against a closed-form reward; returns the ``(epochs + 1, d)`` mean path."""
    path = [dist.mean.copy()]
    for _ in range(epochs):
        raw, clipped = sample_candidates(dist, rng)
        dist = dist.with_mean(reinforce_update(dist, raw, [reward(c) for c in clipped]))
        path.append(dist.mean.copy())
    return np.array(path)


@dataclass
class LoopConfig:
    tau: float = 0.1
    lam: float = 1.0
    zeta_points: int = 9
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class EpochRecord:
    epoch: int
    target: str
    raw: np.ndarray
    candidates: np.ndarray
    rewards: np.ndarray
    losses: np.ndarray
    accuracies: np.ndarray  # (B, K); NaN rows for failed candidates
    chosen: int
    mean_before: np.ndarray
    mean_after: np.ndarray
    zeta_star: np.ndarray | None = None
    wall_clock: float = 0.0


@dataclass
class RewardTrace:
    epochs: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def rows(self) -> list[dict]:
        """One dict per candidate per epoch, in trace order."""
        out = []
        for rec in self.epochs:
            for i in range(len(rec.rewards)):
                out.append(
                    {
                        "epoch": rec.epoch,
                        "target": rec.target,
                        "candidate_id": i,
                        "candidate_values": rec.candidates[i],
                        "reward": rec.rewards[i],
                        "chosen": i == rec.chosen,
                        "loss": rec.losses[i],
                        "accuracies": rec.accuracies[i],
                    }
                )
        return out


def _mix(alpha_vec: np.ndarray) -> NegativeMix | None:
    return NegativeMix(alpha_vec) if alpha_vec.sum() > 0 else None


def run_alternating(
    learner: Learner,
    alpha_dist: HyperDist,
    beta_dist: HyperDist,
    epochs: int,
    train_set: TupleBatch,
    validation: ValidationSet,
    beta_template: AugmentParams,
    seed: int,
    config: LoopConfig | None = None,
) -> tuple[Learner, RewardTrace, HyperDist, HyperDist]:
    """Alternating sample optimisation over ``epochs`` epochs.

    Returns the continuing learner, the trace and the final distributions.
    ``learner`` itself is never modified; with ``epochs == 0`` it is returned
    as is.
    """
    config = config or LoopConfig()
    trace = RewardTrace()
    K = validation.base.K
    for t in range(1, epochs + 1):
        target = "beta" if t % 2 == 1 else "alpha"
        dist = beta_dist if target == "beta" else alpha_dist
        started = time.perf_counter()
        raw, clipped = sample_candidates(dist, substream(seed, CANDIDATES, t))
        cands = dist.values(clipped)
        B = len(cands)
        rewards = np.full(B, -np.inf)
        losses = np.full(B, np.nan)
        accs = np.full((B, K), np.nan)
        branches: list[Learner | None] = [None] * B
        zeta_star = np.full((B, beta_dist.mean.size), np.nan) if target == "beta" else None
        for i, cand in enumerate(cands):
            if target == "alpha":
                alpha, beta = _mix(cand), beta_template.with_vector(beta_dist.values(beta_dist.clip(beta_dist.mean)))
            else:
                alpha, beta = _mix(alpha_dist.values(alpha_dist.clip(alpha_dist.mean))), beta_template.with_vector(cand)
            if alpha is None:
                log.warning("epoch %d candidate %d: all mixture weights clipped to zero", t, i)
                continue
            branch, loss = None, float("nan")
            for attempt, run_seed in enumerate((seed, child_seed(seed, "retry", t, i))):
                branch = learner.clone()
                loss = train_epoch(branch, train_set, alpha, beta, config.train, run_seed, t)
                if np.isfinite(loss):
                    break
                log.warning("epoch %d candidate %d: non-finite loss (attempt %d)", t, i, attempt + 1)
            if not np.isfinite(loss):
                continue
            losses[i] = loss
            branches[i] = branch
            if target == "alpha":
                # queries see the augmentation the branch was trained with
                res = evaluate_crossmodal(branch.encoder, validation, config.tau, beta.with_vector(beta.vector(), role="validation"))
                accs[i] = res.accuracies
                rewards[i] = res.total
            else:
                zs = zeta_star_search(branch.encoder, validation, beta, config.tau, points=config.zeta_points)
                zeta_star[i] = zs
                res = evaluate_crossmodal(branch.encoder, validation, config.tau, beta.with_vector(cand, role="validation"))
                accs[i] = res.accuracies
                rewards[i] = beta_reward_value(res.total / K, cand, zs, beta.bounds(), config.lam)
        ok = np.isfinite(rewards)
        if not ok.any():
            raise CandidateFailure(f"epoch {t}: every {target} candidate failed")
        before = dist.mean.copy()
        new_dist = dist.with_mean(reinforce_update(dist, raw[ok], rewards[ok]))
        if target == "beta":
            beta_dist = new_dist
        else:
            alpha_dist = new_dist
        chosen = int(np.argmax(rewards))
        learner = branches[chosen]
        trace.epochs.append(
            EpochRecord(
                t, target, raw, cands, rewards, losses, accs, chosen, before, new_dist.mean.copy(),
                zeta_star, time.perf_counter() - started,
            )
        )
    return learner, trace, alpha_dist, beta_dist

"""Empirical check of the mutual-information lower bound on Gaussian scenes.

Training minimises the TupleInfoNCE loss with noise-only augmentation, so
both information terms on the right-hand side have closed forms:

    ln N - L  <=  I(t2; t1 | beta) + sum_k alpha_k I(v2^k; rest2^k)

with ``alpha`` normalised to a probability vector.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from .contrastive import LossStreams, NegativeMix, tuple_infonce_loss
from .encoder import init_encoder
from .rng import DATA, INIT, substream
from .synthgen import AugmentParams, SceneSpec, analytic_pair_mi, analytic_view_mi, sample_batch, two_view_spec
from .training import Adam

__all__ = [
    "BoundReport",
    "BoundBudget",
    "bound_estimate",
    "bound_grid_specs",
    "bound_rhs",
    "noise_for_view_mi",
    "verify_tnce_bound",
]

POSITIVE_MODES = ("augment", "resample")


def bound_estimate(loss: float, N: int) -> float:
    """``ln N - loss``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if loss < 0:
        raise ValueError("a cross-entropy loss cannot be negative")
    return math.log(N) - loss


def bound_rhs(spec: SceneSpec, alpha, noise_std, positive: str = "augment") -> tuple[float, float, list[float]]:
    """Right-hand side and its parts ``(total, view_mi, pair_mis)``.

    ``positive="resample"`` draws positives independently of anchors, which
    zeroes the view term.
    """
    if positive not in POSITIVE_MODES:
        raise ValueError(f"positive must be one of {POSITIVE_MODES}")
    p = NegativeMix(alpha).probabilities()
    if p.size != spec.K + 1:
        raise ValueError(f"expected {spec.K + 1} mixture weights, got {p.size}")
    noise = np.broadcast_to(np.asarray(noise_std, dtype=np.float64), (spec.K,))
    view = analytic_view_mi(spec, noise) if positive == "augment" else 0.0
    extra = noise if positive == "augment" else None
    pairs = [analytic_pair_mi(spec, k, extra) if p[k + 1] > 0 else 0.0 for k in range(spec.K)]
    return view + float(np.dot(p[1:], pairs)), view, pairs


def noise_for_view_mi(spec: SceneSpec, target: float, lo: float = 1e-3, hi: float = 1e3) -> float:
    """Common augmentation noise std giving ``I(t2; t1) == target`` nats."""
    f = lambda s: analytic_view_mi(spec, np.full(spec.K, s)) - target  # noqa: E731
    if f(lo) < 0 or f(hi) > 0:
        raise ValueError(f"target {target} nats not reachable for noise in [{lo}, {hi}]")
    return float(brentq(f, lo, hi, xtol=1e-12))


def bound_grid_specs(targets=(0.6, 0.9, 1.2, 1.5), modality_noise: float = 1.0) -> list[tuple[SceneSpec, float]]:
    """Two 1-D modalities on one latent, with augmentation noise solved per target.

    Returns ``(spec, noise_std)`` pairs whose view term equals each target.
    """
    spec = two_view_spec((modality_noise, modality_noise))
    return [(spec, noise_for_view_mi(spec, t)) for t in targets]


@dataclass
class BoundBudget:
    batch_size: int = 128  # N: one positive plus N - 1 in-batch negatives
    max_steps: int = 3000
    window: int = 50
    rel_tol: float = 0.01
    eval_batches: int = 10
    lr: float = 3e-3
    tau: float = 0.1
    hidden: int = 32
    mod_dim: int = 8
    embed_dim: int = 16


@dataclass
class BoundReport:
    N: int
    loss: float
    estimate: float
    rhs: float
    view_mi: float
    pair_mi: list[float]
    alpha: list[float]
    noise_std: list[float]
    slack: float
    tolerance: float
    passed: bool
    converged: bool
    steps: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def _positives(spec, anchors, beta, mode, rng):
    if mode == "resample":
        return sample_batch(spec, len(anchors), rng)
    return None


def verify_tnce_bound(
    spec: SceneSpec,
    alpha,
    noise_std,
    budget: BoundBudget | None = None,
    tolerance: float = 0.1,
    seed: int = 0,
    positive: str = "augment",
) -> BoundReport:
    """Train under ``(alpha, noise-only beta)`` and compare ``ln N - L`` with the analytic side."""
    budget = budget or BoundBudget()
    rhs, view, pairs = bound_rhs(spec, alpha, noise_std, positive)
    mix = NegativeMix(alpha)
    noise = np.broadcast_to(np.asarray(noise_std, dtype=np.float64), (spec.K,))
    beta = AugmentParams.zeros(spec.K, max_noise=noise).with_vector(np.r_[noise, np.zeros(2 * spec.K)])
    enc = init_encoder(spec.dims, budget.hidden, budget.mod_dim, budget.embed_dim, rng=substream(seed, INIT, "bound"))
    opt = Adam(budget.lr)
    N = budget.batch_size
    data = substream(seed, DATA, "bound-train")
    history: list[float] = []
    converged = False
    step = 0
    while step < budget.max_steps:
        anchors = sample_batch(spec, N, data)
        streams = LossStreams.from_seed(seed, "bound-train", step)
        pos = _positives(spec, anchors, beta, positive, streams.augment)
        loss, _ = tuple_infonce_loss(enc, anchors, beta, mix, budget.tau, streams, None, positives=pos)
        history.append(float(loss.value.item()))
        opt.step(enc.params, loss.tape.backward(loss))
        step += 1
        w = budget.window
        if step % w == 0 and step >= 2 * w:
            prev, last = np.mean(history[-2 * w : -w]), np.mean(history[-w:])
            if abs(last - prev) < budget.rel_tol * abs(prev):
                converged = True
                break
    held = substream(seed, DATA, "bound-heldout")
    losses = []
    for i in range(budget.eval_batches):
        anchors = sample_batch(spec, N, held)
        streams = LossStreams.from_seed(seed, "bound-heldout", i)
        pos = _positives(spec, anchors, beta, positive, streams.augment)
        loss, _ = tuple_infonce_loss(enc, anchors, beta, mix, budget.tau, streams, None, positives=pos)
        losses.append(float(loss.value.item()))
    L = float(np.mean(losses))
    est = bound_estimate(L, N)
    return BoundReport(
        N, L, est, float(rhs), float(view), [float(p) for p in pairs], mix.probabilities().tolist(), noise.tolist(),
        float(rhs - est), float(tolerance), bool(est <= rhs + tolerance), converged, step, seed,
    )

"""Encoder training under the TupleInfoNCE objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contrastive import LossStreams, NegativeMix, tuple_infonce_loss
from .encoder import DropoutPolicy, EncoderState
from .rng import substream
from .synthgen import AugmentParams, TupleBatch

__all__ = ["Adam", "Learner", "TrainConfig", "train_epoch", "evaluate_loss"]


class Adam:
    def __init__(self, lr: float = 3e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            # new array, so snapshots holding the old one stay intact
            params[name] = params[name] - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def copy(self) -> "Adam":
        out = Adam(self.lr, self.beta1, self.beta2, self.eps)
        out.t = self.t
        out.m = {k: v.copy() for k, v in self.m.items()}
        out.v = {k: v.copy() for k, v in self.v.items()}
        return out


@dataclass
class TrainConfig:
    batch_size: int = 64
    steps_per_epoch: int = 16
    lr: float = 3e-3
    tau: float = 0.1
    dropout: float = 0.6
    naive: bool = False


@dataclass
class Learner:
    """An encoder together with its optimiser state; the unit that gets branched."""

    encoder: EncoderState
    opt: Adam = field(default_factory=Adam)

    def clone(self) -> "Learner":
        return Learner(self.encoder.copy(), self.opt.copy())


def train_epoch(
    learner: Learner,
    train_set: TupleBatch,
    alpha: NegativeMix,
    beta: AugmentParams,
    cfg: TrainConfig,
    seed: int,
    epoch: int = 0,
) -> float:
    """Run ``cfg.steps_per_epoch`` optimisation steps; returns the mean loss.

    Batches are drawn from ``train_set`` in an order fixed by ``(seed,
    epoch)``, so branches trained from the same parent with different
    hyper-parameters see identical data. Returns NaN (leaving the learner
    partially updated) if a non-finite loss appears.
    """
    B = cfg.batch_size
    n = len(train_set)
    order_rng = substream(seed, "data-order", epoch)
    needed = B * cfg.steps_per_epoch
    order = np.concatenate([order_rng.permutation(n) for _ in range(-(-needed // n))])
    policy = DropoutPolicy(cfg.dropout) if cfg.dropout > 0 else None
    losses = []
    for step in range(cfg.steps_per_epoch):
        batch = train_set.take(order[step * B : (step + 1) * B])
        streams = LossStreams.from_seed(seed, epoch, step)
        loss, _ = tuple_infonce_loss(
            learner.encoder, batch, beta, alpha, cfg.tau, streams, policy, naive=cfg.naive
        )
        value = float(loss.value.item())
        if not np.isfinite(value):
            return float("nan")
        grads = loss.tape.backward(loss)
        learner.opt.step(learner.encoder.params, grads)
        losses.append(value)
    return float(np.mean(losses))


def evaluate_loss(
    encoder: EncoderState,
    batches: list[TupleBatch],
    alpha: NegativeMix,
    beta: AugmentParams,
    tau: float,
    seed: int,
    naive: bool = False,
) -> list[float]:
    """Per-batch TupleInfoNCE loss without dropout or parameter updates."""
    out = []
    for i, batch in enumerate(batches):
        streams = LossStreams.from_seed(seed, "eval", i)
        loss, _ = tuple_infonce_loss(encoder, batch, beta, alpha, tau, streams, None, naive=naive)
        out.append(float(loss.value.item()))
    return out

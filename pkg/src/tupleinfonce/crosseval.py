"""Crossmodal discrimination and the two sample-quality rewards.

For modality ``k`` the query is the ``zeta``-augmented modality alone and
the keys are the un-augmented tuples with modality ``k`` removed; the task
is to find each query's own key among the ``M`` validation tuples.
Encoders are duck-typed: anything with ``encode(TupleBatch) -> ndarray``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numeric import softmax
from .synthgen import AugmentParams, ValidationSet

__all__ = [
    "CrossmodalResult",
    "beta_reward_value",
    "crossmodal_accuracy",
    "crossmodal_probs",
    "evaluate_crossmodal",
    "reward_alpha",
    "reward_beta",
    "zeta_grid",
    "zeta_star_search",
]


def crossmodal_probs(encoder, validation: ValidationSet, k: int, tau: float, zeta: AugmentParams | None = None) -> np.ndarray:
    """``P[n, l]``: softmax over ``l`` of ``g(v'_n^k) . g(rest_l^k) / tau``."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if validation.M < 2:
        raise ValueError("crossmodal discrimination needs M >= 2")
    queries = encoder.encode(validation.augmented(zeta).only(k))
    keys = encoder.encode(validation.base.without(k))
    return softmax(queries @ keys.T / tau)


def crossmodal_accuracy(P: np.ndarray) -> float:
    """Fraction of rows whose argmax is the diagonal; ties go to the smallest index."""
    P = np.asarray(P)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"probability matrix must be square, got {P.shape}")
    return float(np.mean(np.argmax(P, axis=1) == np.arange(P.shape[0])))


@dataclass(eq=False)
class CrossmodalResult:
    probs: list[np.ndarray]
    accuracies: np.ndarray
    tau: float
    zeta: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.accuracies))

    def to_dict(self, with_probs: bool = False) -> dict:
        d = {"accuracies": [float(a) for a in self.accuracies], "tau": self.tau, "zeta": [float(z) for z in self.zeta]}
        if with_probs:
            d["probs"] = [p.tolist() for p in self.probs]
        return d

    def to_json(self, with_probs: bool = False) -> str:
        return json.dumps(self.to_dict(with_probs), sort_keys=True)


def evaluate_crossmodal(encoder, validation: ValidationSet, tau: float, zeta: AugmentParams | None = None) -> CrossmodalResult:
    zeta = validation.zeta if zeta is None else zeta
    K = validation.base.K
    probs = [crossmodal_probs(encoder, validation, k, tau, zeta) for k in range(K)]
    acc = np.array([crossmodal_accuracy(P) for P in probs])
    return CrossmodalResult(probs, acc, tau, zeta.vector())


def reward_alpha(encoder, validation: ValidationSet, tau: float) -> float:
    """Total crossmodal accuracy ``sum_k A^k`` under the validation set's ``zeta``."""
    return evaluate_crossmodal(encoder, validation, tau).total


def zeta_grid(beta_max: np.ndarray, points: int = 9) -> list[np.ndarray]:
    """Per-coordinate uniform grids over ``[0, beta_max]`` (single point 0 where the bound is 0)."""
    return [np.linspace(0.0, hi, points) if hi > 0 else np.zeros(1) for hi in np.asarray(beta_max, dtype=np.float64)]


def zeta_star_search(
    encoder,
    validation: ValidationSet,
    beta: AugmentParams,
    tau: float,
    grid: list[np.ndarray] | None = None,
    points: int = 9,
) -> np.ndarray:
    """``argmax_zeta sum_k A^k(g, zeta)``, searched one coordinate at a time.

    Each coordinate sweeps its grid while the others stay at ``beta``;
    ties resolve to the smallest grid value.
    """
    b = beta.vector()
    grid = zeta_grid(beta.bounds(), points) if grid is None else grid
    if len(grid) != b.size:
        raise ValueError(f"grid has {len(grid)} coordinates, augmentation has {b.size}")
    best = b.copy()
    for c, values in enumerate(grid):
        values = np.asarray(values, dtype=np.float64)
        if values.size == 1:
            best[c] = values[0]
            continue
        totals = []
        for val in values:
            z = b.copy()
            z[c] = val
            zeta = beta.with_vector(z, role="validation")
            totals.append(evaluate_crossmodal(encoder, validation, tau, zeta).total)
        best[c] = values[int(np.argmax(totals))]
    return best


def beta_reward_value(mean_accuracy: float, beta, zeta_star, beta_max, lam: float = 1.0) -> float:
    """``1 - mean_k A^k - lam * ||beta - zeta*||^2 / ||beta_max||^2``."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    beta_max = np.asarray(beta_max, dtype=np.float64)
    norm = float(beta_max @ beta_max)
    if norm <= 0:
        raise ValueError("beta_max must be nonzero")
    diff = np.asarray(beta, dtype=np.float64) - np.asarray(zeta_star, dtype=np.float64)
    return 1.0 - mean_accuracy - lam * float(diff @ diff) / norm


def reward_beta(
    encoder, validation: ValidationSet, beta: AugmentParams, zeta_star, tau: float, lam: float = 1.0
) -> float:
    """Positive-sample reward, with accuracies measured at ``zeta = beta``."""
    result = evaluate_crossmodal(encoder, validation, tau, beta.with_vector(beta.vector(), role="validation"))
    return beta_reward_value(result.total / validation.base.K, beta.vector(), zeta_star, beta.bounds(), lam)

"""Linear-Gaussian multimodal scenes with closed-form mutual information.

A scene is a latent ``z ~ N(0, I)``; modality ``k`` observes
``v_k = W_k z + sigma_k * eps_k``. Because everything is jointly Gaussian,
mutual information between any two groups of coordinates (and between an
anchor tuple and its noise-augmented positive) is available exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rng import substream

__all__ = [
    "AugmentParams",
    "ModalitySpec",
    "ModalityTuple",
    "SceneSpec",
    "SingularCovarianceError",
    "TupleBatch",
    "ValidationSet",
    "analytic_pair_mi",
    "analytic_view_mi",
    "augment_tuple",
    "empirical_mi_estimate",
    "gaussian_mi",
    "make_validation_set",
    "sample_batch",
    "strong_weak_spec",
    "two_view_spec",
]


class SingularCovarianceError(ValueError):
    """Joint covariance is (numerically) singular; add observation noise/jitter."""


@dataclass(frozen=True)
class ModalitySpec:
    mixing: np.ndarray  # (modality_dim, latent_dim)
    noise_std: float

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.mixing, dtype=np.float64))
        object.__setattr__(self, "mixing", W)
        if not np.all(np.isfinite(W)):
            raise ValueError("mixing matrix must be finite")
        if not (np.isfinite(self.noise_std) and self.noise_std >= 0):
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")

    @property
    def dim(self) -> int:
        return self.mixing.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, ModalitySpec)
            and self.noise_std == other.noise_std
            and np.array_equal(self.mixing, other.mixing)
        )


@dataclass(frozen=True, eq=False)
class SceneSpec:
    latent_dim: int
    modalities: tuple[ModalitySpec, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if len(self.modalities) < 1:
            raise ValueError("a scene needs at least one modality")
        for m in self.modalities:
            if m.mixing.shape[1] != self.latent_dim:
                raise ValueError(
                    f"mixing matrix {m.mixing.shape} does not match latent_dim={self.latent_dim}"
                )

    @property
    def K(self) -> int:
        return len(self.modalities)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(m.dim for m in self.modalities)

    def __eq__(self, other):
        return (
            isinstance(other, SceneSpec)
            and self.latent_dim == other.latent_dim
            and self.seed == other.seed
            and self.modalities == other.modalities
        )

    def covariance(self, extra_noise: Sequence[float] | None = None) -> np.ndarray:
        """Covariance of the stacked observation ``(v_1, ..., v_K)``.

        ``extra_noise`` adds independent per-modality Gaussian noise (std),
        as the noise augmentation does.
        """
        W = np.vstack([m.mixing for m in self.modalities])
        var = np.concatenate([np.full(m.dim, m.noise_std**2) for m in self.modalities])
        if extra_noise is not None:
            var = var + np.concatenate(
                [np.full(m.dim, float(s) ** 2) for m, s in zip(self.modalities, extra_noise)]
            )
        return W @ W.T + np.diag(var)

    def blocks(self) -> list[np.ndarray]:
        offsets = np.cumsum((0,) + self.dims)
        return [np.arange(offsets[k], offsets[k + 1]) for k in range(self.K)]

    def to_dict(self) -> dict:
        return {
            "latent_dim": int(self.latent_dim),
            "seed": int(self.seed),
            "modalities": [
                {"mixing": m.mixing.tolist(), "noise_std": float(m.noise_std)}
                for m in self.modalities
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        mods = tuple(ModalitySpec(np.asarray(m["mixing"], dtype=np.float64), float(m["noise_std"])) for m in d["modalities"])
        return cls(int(d["latent_dim"]), mods, int(d.get("seed", 0)))


@dataclass(frozen=True)
class ModalityTuple:
    """One K-tuple; a row view of a :class:`TupleBatch`."""

    modalities: tuple[np.ndarray, ...]
    scene_id: int
    present: tuple[bool, ...]


@dataclass(eq=False)
class TupleBatch:
    """``n`` tuples stored modality-major: ``modalities[k]`` has shape ``(n, d_k)``.

    ``present[i, k]`` is False when modality ``k`` of tuple ``i`` is missing,
    in which case its row holds the zero placeholder.
    """

    modalities: list[np.ndarray]
    scene_ids: np.ndarray
    present: np.ndarray = field(default=None)

    def __post_init__(self):
        self.modalities = [np.asarray(v, dtype=np.float64) for v in self.modalities]
        self.scene_ids = np.asarray(self.scene_ids, dtype=np.int64)
        n = self.scene_ids.shape[0]
        if self.present is None:
            self.present = np.ones((n, len(self.modalities)), dtype=bool)
        self.present = np.asarray(self.present, dtype=bool)
        for v in self.modalities:
            if v.ndim != 2 or v.shape[0] != n:
                raise ValueError(f"modality array {v.shape} does not hold {n} rows")

    def __len__(self) -> int:
        return self.scene_ids.shape[0]

    @property
    def K(self) -> int:
        return len(self.modalities)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(v.shape[1] for v in self.modalities)

    def __getitem__(self, i: int) -> ModalityTuple:
        return ModalityTuple(
            tuple(v[i].copy() for v in self.modalities),
            int(self.scene_ids[i]),
            tuple(bool(p) for p in self.present[i]),
        )

    def take(self, idx) -> "TupleBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return TupleBatch([v[idx] for v in self.modalities], self.scene_ids[idx], self.present[idx])

    def copy(self) -> "TupleBatch":
        return TupleBatch([v.copy() for v in self.modalities], self.scene_ids.copy(), self.present.copy())

    def with_mask(self, mask) -> "TupleBatch":
        """Drop modalities: ``mask`` is ``(K,)`` or ``(n, K)`` booleans, True = keep."""
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), self.present.shape)
        present = self.present & mask
        mods = [np.where(present[:, k : k + 1], v, 0.0) for k, v in enumerate(self.modalities)]
        return TupleBatch(mods, self.scene_ids.copy(), present)

    def only(self, k: int) -> "TupleBatch":
        mask = np.zeros(self.K, dtype=bool)
        mask[k] = True
        return self.with_mask(mask)

    def without(self, k: int) -> "TupleBatch":
        mask = np.ones(self.K, dtype=bool)
        mask[k] = False
        return self.with_mask(mask)

    def equals(self, other: "TupleBatch") -> bool:
        return (
            np.array_equal(self.scene_ids, other.scene_ids)
            and np.array_equal(self.present, other.present)
            and all(np.array_equal(a, b) for a, b in zip(self.modalities, other.modalities))
        )

    @staticmethod
    def concat(batches: Sequence["TupleBatch"]) -> "TupleBatch":
        K = batches[0].K
        return TupleBatch(
            [np.concatenate([b.modalities[k] for b in batches]) for k in range(K)],
            np.concatenate([b.scene_ids for b in batches]),
            np.concatenate([b.present for b in batches]),
        )


def sample_batch(spec: SceneSpec, n: int, rng: np.random.Generator, first_id: int = 0) -> TupleBatch:
    """Draw ``n`` i.i.d. tuples; scene ids are ``first_id, first_id + 1, ...``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = rng.standard_normal((n, spec.latent_dim))
    mods = []
    for m in spec.modalities:
        eps = rng.standard_normal((n, m.dim))
        v = z @ m.mixing.T
        if m.noise_std > 0:
            v = v + m.noise_std * eps
        mods.append(v)
    return TupleBatch(mods, np.arange(first_id, first_id + n))


def gaussian_mi(cov: np.ndarray, a, b) -> float:
    """``I(x_a; x_b)`` in nats for a zero-mean Gaussian with covariance ``cov``."""
    a = np.asarray(a)
    b = np.asarray(b)
    joint = np.concatenate([a, b])

    def logdet(idx):
        sub = cov[np.ix_(idx, idx)]
        sign, val = np.linalg.slogdet(sub)
        if sign <= 0 or np.linalg.cond(sub) > 1e12:
            raise SingularCovarianceError(
                "covariance is singular; give the modalities nonzero noise_std or add jitter"
            )
        return val

    return 0.5 * (logdet(a) + logdet(b) - logdet(joint))


def analytic_pair_mi(spec: SceneSpec, k: int, extra_noise: Sequence[float] | None = None) -> float:
    """``I(v^k; rest)`` where *rest* is every other modality concatenated."""
    if spec.K < 2:
        raise ValueError("need at least two modalities")
    blocks = spec.blocks()
    rest = np.concatenate([blocks[j] for j in range(spec.K) if j != k])
    return gaussian_mi(spec.covariance(extra_noise), blocks[k], rest)


def analytic_view_mi(spec: SceneSpec, noise_std: Sequence[float]) -> float:
    """``I(t2; t1)`` when ``t2 = t1 + noise`` with per-modality std ``noise_std``.

    The joint determinant factors as ``det(S) det(N)``, which gives
    ``0.5 * (logdet(S + N) - logdet(N))``.
    """
    noise = np.concatenate([np.full(m.dim, float(s) ** 2) for m, s in zip(spec.modalities, noise_std)])
    if np.any(noise <= 0):
        raise ValueError("every augmentation noise std must be positive for a finite I(t2; t1)")
    cov = spec.covariance()
    sign, val = np.linalg.slogdet(cov + np.diag(noise))
    return 0.5 * (val - np.sum(np.log(noise)))


def empirical_mi_estimate(a, b, bins: int = 32) -> float:
    """Plug-in MI estimate (nats) from an equiprobable-bin 2-D histogram.

    Marginals are binned at their empirical quantiles, so every marginal bin
    holds ``n / bins`` samples. The estimator is biased upward by roughly
    ``(bins - 1)**2 / (2 n)`` at small sample sizes and downward by the
    discretisation for strongly dependent pairs. Identical inputs saturate
    at ``log(bins)``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("a and b must hold the same number of samples")
    n = a.shape[0]
    if n < bins * bins:
        raise ValueError(f"need at least bins**2 = {bins * bins} samples, got {n}")

    def ranks(x):
        order = np.argsort(x, kind="stable")
        r = np.empty(n, dtype=np.int64)
        r[order] = np.arange(n)
        return r * bins // n

    ia, ib = ranks(a), ranks(b)
    joint = np.bincount(ia * bins + ib, minlength=bins * bins).reshape(bins, bins) / n
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


AUG_KINDS = ("noise", "mask", "rotation")


@dataclass(frozen=True, eq=False)
class AugmentParams:
    """Per-modality augmentation magnitudes and their upper bounds.

    ``noise`` is an additive Gaussian std, ``mask`` a per-coordinate masking
    probability and ``rotation`` an angle in degrees applied to consecutive
    coordinate pairs. ``role`` is ``"train"`` or ``"validation"`` and has no
    effect on the operator.
    """

    noise: np.ndarray
    mask: np.ndarray
    rotation: np.ndarray
    max_noise: np.ndarray
    max_mask: np.ndarray
    max_rotation: np.ndarray
    role: str = "train"

    def __post_init__(self):
        for name in AUG_KINDS + tuple("max_" + k for k in AUG_KINDS):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        K = self.noise.shape[0]
        for name in AUG_KINDS + tuple("max_" + k for k in AUG_KINDS):
            if getattr(self, name).shape != (K,):
                raise ValueError(f"{name} must have one entry per modality ({K})")
        if np.any(self.max_mask > 1):
            raise ValueError("masking fraction bound cannot exceed 1")
        if self.role not in ("train", "validation"):
            raise ValueError(f"unknown role {self.role!r}")
        self.check()

    @classmethod
    def zeros(cls, K: int, max_noise=0.0, max_mask=0.0, max_rotation=0.0, role="train"):
        z = np.zeros(K)
        return cls(z, z, z, np.broadcast_to(max_noise, K), np.broadcast_to(max_mask, K), np.broadcast_to(max_rotation, K), role)

    @property
    def K(self) -> int:
        return self.noise.shape[0]

    def vector(self) -> np.ndarray:
        return np.concatenate([self.noise, self.mask, self.rotation])

    def bounds(self) -> np.ndarray:
        return np.concatenate([self.max_noise, self.max_mask, self.max_rotation])

    def with_vector(self, v, role: str | None = None) -> "AugmentParams":
        v = np.asarray(v, dtype=np.float64)
        K = self.K
        return AugmentParams(
            v[:K], v[K : 2 * K], v[2 * K :],
            self.max_noise, self.max_mask, self.max_rotation,
            role or self.role,
        )

    def check(self):
        v, hi = self.vector(), self.bounds()
        bad = np.flatnonzero((v < 0) | (v > hi) | ~np.isfinite(v))
        if bad.size:
            i = int(bad[0])
            kind, k = AUG_KINDS[i // self.K], i % self.K
            raise ValueError(f"augmentation {kind}[{k}]={v[i]} outside [0, {hi[i]}]")

    def __eq__(self, other):
        return (
            isinstance(other, AugmentParams)
            and self.role == other.role
            and np.array_equal(self.vector(), other.vector())
            and np.array_equal(self.bounds(), other.bounds())
        )


def _rotate_pairs(v: np.ndarray, degrees: float) -> np.ndarray:
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    out = v.copy()
    m = (v.shape[1] // 2) * 2
    x, y = v[:, 0:m:2], v[:, 1:m:2]
    out[:, 0:m:2] = c * x - s * y
    out[:, 1:m:2] = s * x + c * y
    return out


def augment_tuple(batch: TupleBatch, params: AugmentParams, rng: np.random.Generator) -> TupleBatch:
    """Augment every modality independently: rotate, add noise, then mask.

    Random draws are made for every modality regardless of magnitude or
    presence so the stream consumption is a function of the batch shape
    only. Missing modalities keep their zero placeholder.
    """
    if params.K != batch.K:
        raise ValueError(f"augmentation has {params.K} modalities, batch has {batch.K}")
    params.check()
    out = []
    for k, v in enumerate(batch.modalities):
        eps = rng.standard_normal(v.shape)
        keep = rng.random(v.shape) >= params.mask[k]
        w = v
        if params.rotation[k] != 0:
            w = _rotate_pairs(w, params.rotation[k])
        if params.noise[k] != 0:
            w = w + params.noise[k] * eps
        if params.mask[k] != 0:
            w = np.where(keep, w, 0.0)
        w = np.where(batch.present[:, k : k + 1], w, 0.0)
        out.append(w)
    return TupleBatch(out, batch.scene_ids.copy(), batch.present.copy())


@dataclass(eq=False)
class ValidationSet:
    """``M`` held-out tuples plus augmented copies under ``zeta``.

    Augmentations are regenerated from a fixed seed for every ``zeta``
    (common random numbers), so copies under different magnitudes share
    their underlying noise draws and stay index-aligned with ``base``.
    """

    base: TupleBatch
    zeta: AugmentParams
    seed: int

    @property
    def M(self) -> int:
        return len(self.base)

    def augmented(self, zeta: AugmentParams | None = None) -> TupleBatch:
        zeta = self.zeta if zeta is None else zeta
        return augment_tuple(self.base, zeta, substream(self.seed, "validation-augment"))

    def with_zeta(self, zeta: AugmentParams) -> "ValidationSet":
        return ValidationSet(self.base, zeta, self.seed)


def make_validation_set(spec: SceneSpec, M: int, zeta: AugmentParams, seed: int) -> ValidationSet:
    base = sample_batch(spec, M, substream(seed, "validation-base"))
    return ValidationSet(base, zeta, seed)


def strong_weak_spec(
    shared_dim: int = 4,
    strong_private: int = 8,
    shared_gain: float = 1.0,
    private_gain: float = 1.0,
    strong_noise: float = 0.05,
    weak_noise: float = 0.3,
    n_weak: int = 1,
    seed: int = 0,
) -> SceneSpec:
    """A high-dimensional, low-noise strong modality plus ``n_weak`` weak ones.

    The latent splits into ``shared_dim`` coordinates seen by every modality
    and ``strong_private`` coordinates seen only by the strong modality,
    which reads the whole latent through a diagonal gain. Each weak modality
    is the shared block plus heavier noise. Modality 0 is the strong one.
    """
    latent = shared_dim + strong_private
    W_strong = np.diag(np.r_[np.full(shared_dim, shared_gain), np.full(strong_private, private_gain)])
    W_weak = np.eye(shared_dim, latent)
    mods = [ModalitySpec(W_strong, strong_noise)] + [ModalitySpec(W_weak, weak_noise) for _ in range(n_weak)]
    return SceneSpec(latent, tuple(mods), seed)


def two_view_spec(noise_std: Sequence[float], dims: Sequence[int] = (1, 1), seed: int = 0) -> SceneSpec:
    """Modalities that each see one shared scalar latent through unit gains."""
    mods = tuple(ModalitySpec(np.ones((d, 1)), float(s)) for d, s in zip(dims, noise_std))
    return SceneSpec(1, mods, seed)

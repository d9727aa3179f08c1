"""Run configuration: a strict YAML document with a default for every field."""

from __future__ import annotations

from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .synthgen import AugmentParams, SceneSpec, strong_weak_spec

__all__ = ["ConfigError", "RunConfig", "parse_config", "render_config", "load_config", "KINDS"]

KINDS = ("train", "bound-grid", "alpha-sweep", "beta-sweep", "naive-vs-tuple")

Scalars = Union[float, list[float]]


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted key path of the first problem."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class SceneConfig(_Section):
    shared_dim: int = Field(4, ge=1)
    strong_private: int = Field(8, ge=0)
    shared_gain: float = 1.0
    private_gain: float = 1.0
    strong_noise: float = Field(0.05, gt=0)
    weak_noise: float = Field(0.3, gt=0)
    n_weak: int = Field(1, ge=1)
    train_size: int = Field(4096, ge=2)

    def build(self, seed: int = 0) -> SceneSpec:
        return strong_weak_spec(
            self.shared_dim, self.strong_private, self.shared_gain, self.private_gain,
            self.strong_noise, self.weak_noise, self.n_weak, seed,
        )


class EncoderConfig(_Section):
    hidden: int = Field(64, ge=1)
    mod_dim: int = Field(16, ge=1)
    embed_dim: int = Field(32, ge=1)


class TrainSection(_Section):
    batch_size: int = Field(64, ge=2)
    steps_per_epoch: int = Field(16, ge=1)
    lr: float = Field(3e-3, gt=0)


class AugmentConfig(_Section):
    """Per-kind magnitudes; a scalar applies to every modality."""

    noise: Scalars = 0.0
    mask: Scalars = 0.0
    rotation: Scalars = 0.0

    def vectors(self, K: int, where: str) -> dict[str, np.ndarray]:
        out = {}
        for kind in ("noise", "mask", "rotation"):
            v = np.asarray(getattr(self, kind), dtype=np.float64).reshape(-1)
            if v.size == 1:
                v = np.full(K, v[0])
            if v.size != K:
                raise ConfigError(f"{where}.{kind}", f"expected 1 or {K} values, got {v.size}")
            out[kind] = v
        return out


class AlphaSweepConfig(_Section):
    values: list[float] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    modality: int = Field(1, ge=0)
    epochs: int = Field(20, ge=1)
    beta_noise: float = Field(0.1, ge=0)


class BetaSweepConfig(_Section):
    coordinate: Literal["noise", "mask", "rotation"] = "noise"
    modality: int = Field(0, ge=0)
    points: int = Field(9, ge=2)
    epochs: int = Field(20, ge=1)


class NaiveConfig(_Section):
    disturb: float = Field(0.3, gt=0, le=1)
    epochs: int = Field(20, ge=1)
    beta_noise: float = Field(0.1, ge=0)


class BoundConfig(_Section):
    targets: list[float] = [0.6, 0.9, 1.2, 1.5]
    modality_noise: float = Field(0.5, gt=0)
    alphas: list[list[float]] = [[1.0, 0.0, 0.0], [0.5, 0.25, 0.25], [0.34, 0.33, 0.33]]
    seeds: int = Field(5, ge=1)
    N: int = Field(128, ge=2)
    max_steps: int = Field(3000, ge=1)
    tolerance: float = Field(0.1, ge=0)


class RunConfig(_Section):
    kind: Literal["train", "bound-grid", "alpha-sweep", "beta-sweep", "naive-vs-tuple"] = "train"
    seed: int = Field(0, ge=0)
    out: str = "runs/default"
    scene: SceneConfig = SceneConfig()
    encoder: EncoderConfig = EncoderConfig()
    train: TrainSection = TrainSection()
    tau: float = Field(0.1, gt=0)
    dropout: float = Field(0.6, ge=0, le=1)
    alpha_init: Optional[list[float]] = None
    beta_init: Optional[AugmentConfig] = None
    beta_max: AugmentConfig = AugmentConfig(noise=1.0, mask=0.5, rotation=45.0)
    sigma: float = Field(0.1, gt=0)
    eta: float = Field(0.05, gt=0)
    candidates: int = Field(4, ge=1)
    epochs: int = Field(4, ge=0)
    lam: float = Field(1.0, ge=0)
    M: int = Field(128, ge=2)
    reward_baseline: bool = False
    alpha_sweep: AlphaSweepConfig = AlphaSweepConfig()
    beta_sweep: BetaSweepConfig = BetaSweepConfig()
    naive: NaiveConfig = NaiveConfig()
    bound: BoundConfig = BoundConfig()

    @property
    def K(self) -> int:
        return 1 + self.scene.n_weak

    def beta_template(self) -> AugmentParams:
        """Zero augmentation carrying the configured upper bounds."""
        hi = self.beta_max.vectors(self.K, "beta_max")
        if np.any(hi["mask"] > 1):
            raise ConfigError("beta_max.mask", "masking fraction cannot exceed 1")
        z = np.zeros(self.K)
        return AugmentParams(z, z, z, hi["noise"], hi["mask"], hi["rotation"])

    def beta_start(self) -> np.ndarray:
        tmpl = self.beta_template()
        if self.beta_init is None:
            return 0.25 * tmpl.bounds()
        v = self.beta_init.vectors(self.K, "beta_init")
        vec = np.concatenate([v["noise"], v["mask"], v["rotation"]])
        try:
            tmpl.with_vector(vec)
        except ValueError as exc:
            raise ConfigError("beta_init", str(exc)) from None
        return vec

    def alpha_start(self) -> np.ndarray:
        if self.alpha_init is None:
            return np.full(self.K + 1, 1.0 / (self.K + 1))
        return np.asarray(self.alpha_init, dtype=np.float64)


def _path(loc) -> str:
    return ".".join(str(p) for p in loc if not (isinstance(p, str) and p.startswith(("function-", "union["))))


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse YAML text into a fully resolved :class:`RunConfig`.

    ``overrides`` replaces top-level keys after loading (used by the CLI).
    """
    try:
        data = yaml.safe_load(text) if text and text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError("", f"malformed YAML: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("", "top level must be a mapping")
    if overrides:
        data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        path = _path(err["loc"])
        if err["type"] == "extra_forbidden":
            raise ConfigError(path, "unknown key") from None
        raise ConfigError(path, err["msg"]) from None
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: RunConfig) -> None:
    K = cfg.K
    if cfg.alpha_init is not None:
        if len(cfg.alpha_init) != K + 1:
            raise ConfigError("alpha_init", f"needs {K + 1} entries, got {len(cfg.alpha_init)}")
        if any(a < 0 for a in cfg.alpha_init) or sum(cfg.alpha_init) <= 0:
            raise ConfigError("alpha_init", "entries must be >= 0 with a positive sum")
    for name in ("alpha_sweep", "beta_sweep"):
        if getattr(cfg, name).modality >= K:
            raise ConfigError(f"{name}.modality", f"must be < K = {K}")
    if any(not 0 <= v <= 1 for v in cfg.alpha_sweep.values):
        raise ConfigError("alpha_sweep.values", "weights must lie in [0, 1]")
    for i, a in enumerate(cfg.bound.alphas):
        if len(a) != 3 or any(x < 0 for x in a) or sum(a) <= 0:
            raise ConfigError(f"bound.alphas.{i}", "need three nonnegative weights with a positive sum")
    cfg.beta_start()


def render_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="python"), sort_keys=False, default_flow_style=None)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())

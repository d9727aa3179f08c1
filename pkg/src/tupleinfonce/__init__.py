"""Tuple-level contrastive learning for multimodal fusion on synthetic Gaussian scenes.

Submodules: ``numeric`` (reverse-mode autodiff), ``synthgen`` (scenes,
augmentation, analytic mutual information), ``encoder``, ``contrastive``
(disturbed negatives and the losses), ``training``, ``crosseval``
(crossmodal discrimination and rewards), ``sampleopt`` (REINFORCE search
over the negative mixture and augmentation), ``miverify`` (bound checks)
and ``expcli`` (experiment runner).
"""

from .contrastive import NegativeMix, infonce_pipeline, sample_negatives, tuple_infonce_loss
from .crosseval import evaluate_crossmodal, reward_alpha, reward_beta, zeta_star_search
from .encoder import DropoutPolicy, EncoderState, init_encoder, load_checkpoint, save_checkpoint
from .miverify import bound_estimate, verify_tnce_bound
from .sampleopt import HyperDist, reinforce_update, run_alternating, sample_candidates
from .synthgen import AugmentParams, SceneSpec, sample_batch, strong_weak_spec

__version__ = "0.1.0"

__all__ = [
    "AugmentParams",
    "DropoutPolicy",
    "EncoderState",
    "HyperDist",
    "NegativeMix",
    "SceneSpec",
    "bound_estimate",
    "evaluate_crossmodal",
    "infonce_pipeline",
    "init_encoder",
    "load_checkpoint",
    "reinforce_update",
    "reward_alpha",
    "reward_beta",
    "run_alternating",
    "sample_batch",
    "sample_candidates",
    "sample_negatives",
    "save_checkpoint",
    "strong_weak_spec",
    "tuple_infonce_loss",
    "verify_tnce_bound",
    "zeta_star_search",
]

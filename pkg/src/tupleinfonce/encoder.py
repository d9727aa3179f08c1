"""Multimodal feature encoder with modality-dropout support.

Each modality ``k`` passes through its own one-hidden-layer MLP whose input
is the modality vector plus a presence flag. The per-modality codes are
concatenated and fused by a second one-hidden-layer MLP, and the result is
L2-normalised. A missing modality is fed as zeros with flag 0, so the
encoder accepts any subset of modalities.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numeric import Tape, Var, affine, concat_cols, normalize_rows, relu
from .synthgen import TupleBatch

__all__ = [
    "CheckpointError",
    "DropoutDraw",
    "DropoutPolicy",
    "EncoderSnapshot",
    "EncoderState",
    "init_encoder",
    "load_checkpoint",
    "sample_dropout_masks",
    "save_checkpoint",
]

SNAPSHOT_VERSION = 1
CHECKPOINT_MAGIC = b"TNCE"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderSnapshot:
    version: int
    dims: tuple[int, ...]
    hidden: int
    mod_dim: int
    embed_dim: int
    normalize: bool
    params: dict


@dataclass(eq=False)
class EncoderState:
    dims: tuple[int, ...]
    hidden: int = 64
    mod_dim: int = 16
    embed_dim: int = 32
    normalize: bool = True
    params: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.dims)

    def shapes(self) -> dict[str, tuple[int, int]]:
        """Registry order and shapes; a pure function of the dimensions."""
        out = {}
        H, Dm, D = self.hidden, self.mod_dim, self.embed_dim
        for k, d in enumerate(self.dims):
            out[f"mod{k}.W1"] = (d + 1, H)
            out[f"mod{k}.b1"] = (1, H)
            out[f"mod{k}.W2"] = (H, Dm)
            out[f"mod{k}.b2"] = (1, Dm)
        out["fuse.W1"] = (self.K * Dm, H)
        out["fuse.b1"] = (1, H)
        out["fuse.W2"] = (H, D)
        out["fuse.b2"] = (1, D)
        return out

    def num_params(self) -> int:
        return sum(r * c for r, c in self.shapes().values())

    def forward(self, tape: Tape, pvars: dict[str, Var], batch: TupleBatch) -> Var:
        if batch.dims != tuple(self.dims):
            raise ValueError(f"batch modality dims {batch.dims} do not match encoder dims {tuple(self.dims)}")
        codes = []
        for k in range(self.K):
            flag = batch.present[:, k : k + 1].astype(np.float64)
            x = np.concatenate([batch.modalities[k] * flag, flag], axis=1)
            h = relu(affine(tape.constant(x), pvars[f"mod{k}.W1"], pvars[f"mod{k}.b1"]))
            codes.append(affine(h, pvars[f"mod{k}.W2"], pvars[f"mod{k}.b2"]))
        fused = concat_cols(codes) if self.K > 1 else codes[0]
        h = relu(affine(fused, pvars["fuse.W1"], pvars["fuse.b1"]))
        out = affine(h, pvars["fuse.W2"], pvars["fuse.b2"])
        return normalize_rows(out) if self.normalize else out

    def register(self, tape: Tape) -> dict[str, Var]:
        return {name: tape.parameter(name, self.params[name]) for name in self.shapes()}

    def encode(self, batch: TupleBatch) -> np.ndarray:
        """Embeddings ``(n, embed_dim)`` without recording gradients."""
        tape = Tape()
        return self.forward(tape, self.register(tape), batch).value

    def snapshot(self) -> EncoderSnapshot:
        return EncoderSnapshot(
            SNAPSHOT_VERSION, tuple(self.dims), self.hidden, self.mod_dim, self.embed_dim,
            self.normalize, {k: v.copy() for k, v in self.params.items()},
        )

    def restore(self, snap: EncoderSnapshot) -> None:
        if snap.version != SNAPSHOT_VERSION:
            raise CheckpointError(f"snapshot version {snap.version} != {SNAPSHOT_VERSION}")
        self.dims = tuple(snap.dims)
        self.hidden, self.mod_dim, self.embed_dim = snap.hidden, snap.mod_dim, snap.embed_dim
        self.normalize = snap.normalize
        self.params = {k: v.copy() for k, v in snap.params.items()}

    @classmethod
    def from_snapshot(cls, snap: EncoderSnapshot) -> "EncoderState":
        state = cls(tuple(snap.dims))
        state.restore(snap)
        return state

    def copy(self) -> "EncoderState":
        return EncoderState.from_snapshot(self.snapshot())

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        header = [CHECKPOINT_VERSION, self.K, *self.dims, self.hidden, self.mod_dim, self.embed_dim, int(self.normalize)]
        buf.write(struct.pack(f"<{len(header)}I", *header))
        for name in self.shapes():
            buf.write(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, expect: "EncoderState | None" = None) -> "EncoderState":
        if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError("not a checkpoint: bad magic header")
        version, K = struct.unpack_from("<2I", data, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        n_header = 2 + K + 4
        if len(data) < 4 + 4 * n_header:
            raise CheckpointError("checkpoint truncated inside header")
        header = struct.unpack_from(f"<{n_header}I", data, 4)
        dims = tuple(header[2 : 2 + K])
        hidden, mod_dim, embed_dim, normalize = header[2 + K :]
        state = cls(dims, hidden, mod_dim, embed_dim, bool(normalize))
        if expect is not None:
            got = (state.dims, state.hidden, state.mod_dim, state.embed_dim)
            want = (tuple(expect.dims), expect.hidden, expect.mod_dim, expect.embed_dim)
            if got != want:
                raise CheckpointError(f"dimension mismatch: checkpoint {got} vs expected {want}")
        offset = 4 + 4 * n_header
        need = offset + 8 * state.num_params()
        if len(data) != need:
            raise CheckpointError(f"checkpoint size {len(data)} bytes, expected {need}")
        for name, (r, c) in state.shapes().items():
            n = r * c
            state.params[name] = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(r, c)
            offset += 8 * n
        return state


def init_encoder(
    dims, hidden: int = 64, mod_dim: int = 16, embed_dim: int = 32,
    normalize: bool = True, rng: np.random.Generator | None = None,
) -> EncoderState:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialisation in registry order."""
    rng = rng if rng is not None else np.random.default_rng(0)
    state = EncoderState(tuple(int(d) for d in dims), hidden, mod_dim, embed_dim, normalize)
    fan_in = None
    for name, shape in state.shapes().items():
        if name.endswith("W1") or name.endswith("W2"):
            fan_in = shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        state.params[name] = rng.uniform(-bound, bound, size=shape)
    return state


def save_checkpoint(path, state: EncoderState) -> None:
    Path(path).write_bytes(state.to_bytes())


def load_checkpoint(path, expect: EncoderState | None = None) -> EncoderState:
    return EncoderState.from_bytes(Path(path).read_bytes(), expect)


@dataclass(frozen=True)
class DropoutPolicy:
    prob: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError("dropout probability must lie in [0, 1]")


@dataclass(frozen=True)
class DropoutDraw:
    active: bool
    anchor: np.ndarray  # (K,) True = keep
    candidate: np.ndarray  # shared by the positive and every negative


def _nonempty_subset(K: int, rng: np.random.Generator) -> np.ndarray:
    # uniform over the 2**K - 1 nonempty subsets
    code = int(rng.integers(1, 2**K))
    return np.array([(code >> k) & 1 == 1 for k in range(K)])


def sample_dropout_masks(policy: DropoutPolicy, K: int, rng: np.random.Generator) -> DropoutDraw:
    """Batch-level masks: active with ``policy.prob``; candidates share one mask."""
    if K < 1:
        raise ValueError("K must be >= 1")
    active = bool(rng.random() < policy.prob)
    full = np.ones(K, dtype=bool)
    if not active or K == 1:
        return DropoutDraw(active, full, full)
    return DropoutDraw(True, _nonempty_subset(K, rng), _nonempty_subset(K, rng))

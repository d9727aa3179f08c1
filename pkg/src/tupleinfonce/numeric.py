"""Dense reverse-mode differentiation over float64 numpy matrices.

A :class:`Tape` is built fresh for every forward pass (define-by-run).
Trainable arrays are registered on it with :meth:`Tape.parameter`, the
forward pass is written with the primitives in this module, and
:meth:`Tape.backward` returns the gradient of a scalar loss with respect to
every registered parameter.

>>> tape = Tape()
>>> x = tape.parameter("x", [[2.0]])
>>> y = tape.parameter("y", [[3.0]])
>>> grads = tape.backward(matmul(x, y))
>>> float(grads["x"][0, 0])
3.0
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "NumericError",
    "ShapeError",
    "Tape",
    "Var",
    "affine",
    "apply_affine",
    "apply_relu",
    "as_matrix",
    "concat_cols",
    "concat_rows",
    "divide",
    "finite_difference_check",
    "group_scores",
    "matmul",
    "normalize_rows",
    "relu",
    "scale",
    "softmax",
    "softmax_cross_entropy",
    "take_rows",
    "backward_sweep",
]

NORM_EPS = 1e-12


class NumericError(ValueError):
    """Raised for invalid inputs to the numeric primitives."""


class ShapeError(NumericError):
    def __init__(self, op: str, left: tuple, right: tuple):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f"{op}: shape mismatch {self.left} vs {self.right}")


class Var:
    """A node on a :class:`Tape`: a value plus the rule to push gradients back."""

    __slots__ = ("tape", "value", "grad", "parents", "backward_fn", "name")

    def __init__(self, tape, value, parents=(), backward_fn=None, name=None):
        self.tape = tape
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"


def _as_matrix(value, what="value") -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise NumericError(f"{what} must be 2-D, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains non-finite entries")
    return arr


class Tape:
    """Ordered record of primitive operations plus a parameter registry."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.params: dict[str, Var] = {}
        self._consumed = False

    def parameter(self, name: str, value) -> Var:
        if name in self.params:
            raise NumericError(f"parameter {name!r} registered twice")
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        var = Var(self, arr, name=name)
        self.params[name] = var
        self.nodes.append(var)
        return var

    def constant(self, value) -> Var:
        var = Var(self, _as_matrix(value, "constant"))
        self.nodes.append(var)
        return var

    def record(self, value: np.ndarray, parents: Sequence[Var], backward_fn, name: str | None = None) -> Var:
        var = Var(self, value, tuple(parents), backward_fn, name)
        self.nodes.append(var)
        return var

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise NumericError("cannot mix variables from different tapes")
            return x
        return self.constant(x)

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Reverse sweep from a scalar ``loss``; returns ``{name: gradient}``.

        The tape is consumed: a second call raises.
        """
        if self._consumed:
            raise NumericError("tape already consumed by a previous backward sweep")
        if not self.nodes or loss.tape is not self:
            raise NumericError("backward called before a forward pass was recorded")
        if loss.value.size != 1:
            raise NumericError(f"loss must be scalar, got shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            parent_grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, parent_grads):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g.copy()
                else:
                    parent.grad += g
        grads = {}
        for name, var in self.params.items():
            grads[name] = np.zeros_like(var.value) if var.grad is None else var.grad
        self.nodes = []
        self._consumed = True
        return grads


def backward_sweep(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    return tape.backward(loss)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise NumericError("at least one operand must be a tape variable")


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    av, bv = a.value, b.value

    def back(g):
        return g @ bv.T, av.T @ g

    return tape.record(av @ bv, (a, b), back)


def affine(x, W, b) -> Var:
    """``out[i, j] = sum_d x[i, d] * W[d, j] + b[j]``."""
    tape = _tape_of(x, W, b)
    x, W, b = tape.lift(x), tape.lift(W), tape.lift(b)
    if x.shape[1] != W.shape[0]:
        raise ShapeError("affine", x.shape, W.shape)
    if b.shape != (1, W.shape[1]):
        raise ShapeError("affine bias", W.shape, b.shape)
    xv, Wv = x.value, W.value

    def back(g):
        return g @ Wv.T, xv.T @ g, g.sum(axis=0, keepdims=True)

    return tape.record(xv @ Wv + b.value, (x, W, b), back)


apply_affine = affine


def relu(x: Var) -> Var:
    mask = x.value > 0

    def back(g):
        return (g * mask,)

    return x.tape.record(np.where(mask, x.value, 0.0), (x,), back, "relu")


apply_relu = relu


def scale(x: Var, c: float) -> Var:
    c = float(c)

    def back(g):
        return (g * c,)

    return x.tape.record(x.value * c, (x,), back)


def divide(x: Var, c: float) -> Var:
    """Elementwise ``x / c`` for a scalar ``c`` (used for temperatures)."""
    c = float(c)
    if c == 0 or not np.isfinite(c):
        raise NumericError(f"divisor must be finite and nonzero, got {c}")

    def back(g):
        return (g / c,)

    return x.tape.record(x.value / c, (x,), back)


def concat_rows(xs: Sequence[Var]) -> Var:
    tape = _tape_of(*xs)
    xs = [tape.lift(x) for x in xs]
    cols = {x.shape[1] for x in xs}
    if len(cols) != 1:
        raise ShapeError("concat_rows", xs[0].shape, next(x.shape for x in xs if x.shape[1] != xs[0].shape[1]))
    splits = np.cumsum([x.shape[0] for x in xs])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=0))

    return tape.record(np.concatenate([x.value for x in xs], axis=0), tuple(xs), back)


def take_rows(x: Var, idx) -> Var:
    """Gather rows ``x[idx]``; repeated indices accumulate in the backward pass."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise NumericError(f"row index out of range for {n} rows")

    def back(g):
        gx = np.zeros_like(x.value)
        np.add.at(gx, idx, g)
        return (gx,)

    return x.tape.record(x.value[idx], (x,), back)


def concat_cols(xs: Sequence[Var]) -> Var:
    tape = _tape_of(*xs)
    xs = [tape.lift(x) for x in xs]
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise ShapeError("concat_cols", xs[0].shape, next(x.shape for x in xs if x.shape[0] != xs[0].shape[0]))
    widths = [x.shape[1] for x in xs]
    splits = np.cumsum(widths)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=1))

    return tape.record(np.concatenate([x.value for x in xs], axis=1), tuple(xs), back)


def normalize_rows(x: Var, eps: float = NORM_EPS) -> Var:
    """Divide every row by ``max(||row||_2, eps)``."""
    norms = np.sqrt(np.sum(x.value * x.value, axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    y = x.value / denom
    live = norms > eps

    def back(g):
        radial = np.sum(g * y, axis=1, keepdims=True)
        gx = np.where(live, (g - y * radial) / denom, g / eps)
        return (gx,)

    return x.tape.record(y, (x,), back)


def group_scores(anchors: Var, candidates: Var, n: int) -> Var:
    """Score ``anchors[i]`` against its own block of ``n`` candidate rows.

    ``out[i, j] = anchors[i] . candidates[i * n + j]``.
    """
    tape = _tape_of(anchors, candidates)
    anchors, candidates = tape.lift(anchors), tape.lift(candidates)
    B, D = anchors.shape
    if candidates.shape != (B * n, D):
        raise ShapeError("group_scores", anchors.shape, candidates.shape)
    a = anchors.value
    c = candidates.value.reshape(B, n, D)
    out = np.einsum("id,ijd->ij", a, c)

    def back(g):
        ga = np.einsum("ij,ijd->id", g, c)
        gc = (g[:, :, None] * a[:, None, :]).reshape(B * n, D)
        return ga, gc

    return tape.record(out, (anchors, candidates), back)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Var, targets) -> Var:
    """Mean over rows of ``-log softmax(logits)[row, target]``."""
    B, C = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != B:
        raise ShapeError("softmax_cross_entropy targets", logits.shape, targets.shape)
    if C < 1 or np.any(targets < 0) or np.any(targets >= C):
        raise NumericError(f"targets must lie in [0, {C}), got {targets.tolist()}")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = np.mean(log_norm - z[rows, targets])
    probs = np.exp(z - log_norm[:, None])

    def back(g):
        d = probs.copy()
        d[rows, targets] -= 1.0
        return (d * (g.item() / B),)

    return logits.tape.record(np.array([[loss]]), (logits,), back)


def finite_difference_check(
    build: Callable[[Tape, Mapping[str, Var]], Var],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare reverse-mode gradients with central differences.

    ``build(tape, vars)`` must return a scalar loss computed from the
    registered ``vars``. Returns the max over checked coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``. When
    ``coords`` is given, that many coordinates are sampled with ``rng``.
    """
    if h <= 0:
        raise NumericError("step h must be positive")

    def evaluate(values):
        tape = Tape()
        vs = {k: tape.parameter(k, v) for k, v in values.items()}
        return tape, build(tape, vs)

    tape, loss = evaluate(params)
    if not np.isfinite(loss.value).all():
        raise NumericError("objective is non-finite at the base point")
    analytic = tape.backward(loss)

    flat = [(name, idx) for name, arr in params.items() for idx in np.ndindex(np.shape(arr))]
    if coords is not None and coords < len(flat):
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.choice(len(flat), size=coords, replace=False)
        flat = [flat[i] for i in sorted(pick)]

    worst = 0.0
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    for name, idx in flat:
        arr = work[name]
        orig = arr[idx]
        arr[idx] = orig + h
        fp = evaluate(work)[1].value.item()
        arr[idx] = orig - h
        fm = evaluate(work)[1].value.item()
        arr[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"objective is non-finite near {name}{list(idx)}")
        numeric = (fp - fm) / (2 * h)
        a = analytic[name].reshape(np.shape(arr))[idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


def as_matrix(value: Iterable) -> np.ndarray:
    """Validate and convert to a finite float64 matrix (1-D input becomes one row)."""
    return _as_matrix(value)

"""Define-by-run reverse-mode differentiation over dense float64 arrays.

Only the primitives the path model needs are provided. Each primitive
evaluates eagerly and, when the tape is recording, appends a closure that maps
the output adjoint onto its inputs' adjoints. :func:`backward` replays the
closures in reverse, so gradients accumulate additively at fan-out.

Row-wise operations take a 2-D array of shape ``(rows, features)``; a
"group" is an integer row -> segment assignment used by the neighbourhood
softmax and the scatter-sum aggregation.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import sparse


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "tape", "name")

    def __init__(self, value: np.ndarray, tape: "Tape", name: str | None = None):
        self.value = value
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def _accumulate(self, g: np.ndarray, owned: bool = False) -> None:
        # ``owned`` marks a freshly allocated array that may be adopted without a copy.
        if self.grad is None:
            self.grad = g if owned else np.array(g)
        else:
            self.grad += g


class Segments:
    """Row -> group assignment with cached reduction machinery."""

    def __init__(self, groups, n_groups: int):
        self.groups = np.asarray(groups, dtype=np.int64)
        self.n_groups = int(n_groups)
        if self.groups.ndim != 1:
            raise ShapeError(f"groups must be 1-D, got shape {self.groups.shape}")
        if self.groups.size and (self.groups.min() < 0 or self.groups.max() >= self.n_groups):
            raise ShapeError(f"group ids out of range for {self.n_groups} groups")
        self._matrix = None
        counts = np.bincount(self.groups, minlength=self.n_groups)
        contiguous = bool(np.all(np.diff(self.groups) >= 0)) and bool(np.all(counts > 0))
        self._starts = np.concatenate([[0], np.cumsum(counts)[:-1]]) if contiguous else None

    def __len__(self) -> int:
        return self.groups.size

    @property
    def matrix(self) -> sparse.csr_matrix:
        if self._matrix is None:
            n = self.groups.size
            self._matrix = sparse.csr_matrix(
                (np.ones(n), (self.groups, np.arange(n))), shape=(self.n_groups, n)
            )
        return self._matrix

    def sum(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 1 and x.dtype == np.float64:
            return np.bincount(self.groups, weights=x, minlength=self.n_groups)
        return np.asarray(self.matrix @ x)

    def max(self, x: np.ndarray) -> np.ndarray:
        if self._starts is not None:
            return np.maximum.reduceat(x, self._starts)
        out = np.full(self.n_groups, -np.inf)
        np.maximum.at(out, self.groups, x)
        return out


def as_segments(groups, n_groups: int | None) -> Segments:
    if isinstance(groups, Segments):
        return groups
    if n_groups is None:
        raise ValueError("n_groups is required with a plain group array")
    return Segments(groups, n_groups)


class Tape:
    """Records primitive applications in execution order.

    ``record=False`` gives a forward-only tape for inference. ``debug=True``
    checks every primitive output for NaN/Inf. ``dtype`` is float64 except for
    reference evaluations in extended precision.
    """

    def __init__(self, record: bool = True, debug: bool = False, dtype=np.float64):
        self.record = record
        self.debug = debug
        self.dtype = np.dtype(dtype)
        self.ops: list[Callable[[], None]] = []
        self.leaves: list[Tensor] = []
        self._done = False

    def leaf(self, value, name: str | None = None) -> Tensor:
        t = Tensor(np.asarray(value, dtype=self.dtype), self, name)
        self.leaves.append(t)
        return t

    def constant(self, value) -> Tensor:
        return Tensor(np.asarray(value, dtype=self.dtype), self)

    def _emit(self, value: np.ndarray, back: Callable[[Tensor], None] | None, op: str) -> Tensor:
        if self.debug and not np.all(np.isfinite(value)):
            raise FloatingPointError(f"{op} produced non-finite values")
        out = Tensor(value, self)
        if self.record and back is not None:
            self.ops.append(lambda: back(out) if out.grad is not None else None)
        return out


def _same_tape(*xs: Tensor) -> Tape:
    tape = xs[0].tape
    for x in xs[1:]:
        if x.tape is not tape:
            raise TapeError("tensors belong to different tapes")
    return tape


def _need_rows(op: str, x: Tensor) -> None:
    if x.value.ndim != 2:
        raise ShapeError(f"{op}: expected a 2-D (rows, features) array, got shape {x.shape}")


# --- primitives -------------------------------------------------------------

def matvec(x: Tensor, w: Tensor) -> Tensor:
    """Apply matrix ``w`` (out, in) to every row of ``x`` (rows, in)."""
    tape = _same_tape(x, w)
    _need_rows("matvec", x)
    if w.value.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"matvec: matrix shape {w.shape} incompatible with rows of shape {x.shape}")
    xv, wv = x.value, w.value

    def back(out):
        g = out.grad
        x._accumulate(g @ wv, owned=True)
        w._accumulate(g.T @ xv, owned=True)

    return tape._emit(xv @ wv.T, back, "matvec")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a feature vector added to every row of ``a``."""
    tape = _same_tape(a, b)
    if a.shape == b.shape:
        def back(out):
            a._accumulate(out.grad)
            b._accumulate(out.grad)
    elif a.value.ndim == 2 and b.value.ndim == 1 and b.shape[0] == a.shape[1]:
        def back(out):
            a._accumulate(out.grad)
            b._accumulate(out.grad.sum(axis=0), owned=True)
    else:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} are incompatible")
    return tape._emit(a.value + b.value, back, "add")


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row ``r`` of ``x`` by scalar ``s[r]``."""
    tape = _same_tape(x, s)
    _need_rows("scale_rows", x)
    if s.value.ndim != 1 or s.shape[0] != x.shape[0]:
        raise ShapeError(f"scale_rows: scale shape {s.shape} does not match rows of {x.shape}")
    xv, sv = x.value, s.value

    def back(out):
        g = out.grad
        x._accumulate(g * sv[:, None], owned=True)
        s._accumulate(np.einsum("ij,ij->i", g, xv), owned=True)

    return tape._emit(xv * sv[:, None], back, "scale_rows")


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate row-aligned blocks along the feature axis."""
    tape = _same_tape(*xs)
    for x in xs:
        _need_rows("concat", x)
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise ShapeError(f"concat: row counts differ: {[x.shape for x in xs]}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def back(out):
        g = out.grad
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            x._accumulate(g[:, lo:hi])

    return tape._emit(np.concatenate([x.value for x in xs], axis=1), back, "concat")


def gather(x: Tensor, index) -> Tensor:
    """Select rows ``x[index]``; ``index`` may be a :class:`Segments` over ``x``'s rows."""
    seg = as_segments(index, x.shape[0])
    if seg.n_groups != x.shape[0]:
        raise ShapeError(f"gather: index built for {seg.n_groups} rows, tensor has {x.shape[0]}")

    def back(out):
        x._accumulate(seg.sum(out.grad), owned=True)

    return x.tape._emit(x.value[seg.groups], back, "gather")


def scatter_sum(x: Tensor, groups, n_groups: int | None = None) -> Tensor:
    """Sum the rows of ``x`` into buckets given by ``groups``."""
    seg = as_segments(groups, n_groups)
    if len(seg) != x.shape[0]:
        raise ShapeError(f"scatter_sum: {len(seg)} group ids for {x.shape[0]} rows")

    def back(o):
        x._accumulate(o.grad[seg.groups], owned=True)

    return x.tape._emit(seg.sum(x.value), back, "scatter_sum")


def neighbor_softmax(scores: Tensor, groups, n_groups: int | None = None) -> Tensor:
    """Softmax of a score vector within each group (max-shifted for stability)."""
    seg = as_segments(groups, n_groups)
    sv = scores.value
    if sv.ndim != 1 or len(seg) != sv.shape[0]:
        raise ShapeError(f"neighbor_softmax: scores {sv.shape} and {len(seg)} group ids must match (1-D)")
    idx = seg.groups
    e = np.exp(sv - seg.max(sv)[idx])
    p = e / seg.sum(e)[idx]

    def back(out):
        g = out.grad
        scores._accumulate(p * (g - seg.sum(g * p)[idx]), owned=True)

    return scores.tape._emit(p, back, "neighbor_softmax")


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    xv = x.value

    def back(out):
        x._accumulate(np.where(xv > 0, out.grad, slope * out.grad), owned=True)

    return x.tape._emit(np.where(xv > 0, xv, slope * xv), back, "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    xv = x.value
    # Split by sign so exp never overflows.
    ez = np.exp(-np.abs(xv))
    y = np.where(xv >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))

    def back(out):
        x._accumulate(out.grad * y * (1.0 - y), owned=True)

    return x.tape._emit(y, back, "sigmoid")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.value)

    def back(out):
        x._accumulate(out.grad * y, owned=True)

    return x.tape._emit(y, back, "exp")


def log(x: Tensor) -> Tensor:
    xv = x.value
    if np.any(xv <= 0):
        raise FloatingPointError("log of non-positive value")

    def back(out):
        x._accumulate(out.grad / xv, owned=True)

    return x.tape._emit(np.log(xv), back, "log")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    xv = x.value
    inside = (xv >= lo) & (xv <= hi)

    def back(out):
        x._accumulate(out.grad * inside, owned=True)

    return x.tape._emit(np.clip(xv, lo, hi), back, "clip")


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    """``scale * x + shift`` with constant scalars."""

    def back(out):
        x._accumulate(out.grad * scale, owned=True)

    return x.tape._emit(scale * x.value + shift, back, "affine")


def weighted_sum(x: Tensor, weights) -> Tensor:
    """Scalar ``sum(weights * x)`` with a constant weight array."""
    weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), x.shape)

    def back(out):
        x._accumulate(out.grad * weights, owned=True)

    return x.tape._emit(np.asarray(np.sum(weights * x.value)), back, "weighted_sum")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    try:
        y = x.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None

    def back(out):
        x._accumulate(out.grad.reshape(old))

    return x.tape._emit(y, back, "reshape")


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not train or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def back(out):
        x._accumulate(out.grad * mask, owned=True)

    return x.tape._emit(x.value * mask, back, "dropout")


# --- reverse pass -----------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(.) through every recorded op; results land in ``.grad``."""
    tape = loss.tape
    if not tape.record:
        raise TapeError("backward on a forward-only tape")
    if not tape.ops:
        raise TapeError("backward called before any recorded forward operation")
    if tape._done:
        raise TapeError("backward already run on this tape")
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.value)
    for op in reversed(tape.ops):
        op()
    tape._done = True


def gradients(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    backward(loss)
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in params.items()}


def finite_difference_check(
    f: Callable[[Tape, dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    step: float = 1e-6,
    numeric_dtype=np.longdouble,
    entries: dict[str, Sequence[int]] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f(tape, leaves)`` must build a scalar loss from the leaf tensors and be
    deterministic. The per-entry error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    The analytic side runs in float64. The difference quotients are evaluated
    in ``numeric_dtype`` (extended precision by default): in float64 the
    rounding noise of the loss, about ``eps * |loss| / step``, would swamp
    gradient entries below roughly 1e-6.

    ``entries`` optionally restricts the check to some flat indices per
    parameter; parameters missing from it are skipped.
    """
    tape = Tape()
    leaves = {k: tape.leaf(v.copy(), k) for k, v in params.items()}
    analytic = gradients(f(tape, leaves), leaves)

    def value(p):
        t = Tape(record=False, dtype=numeric_dtype)
        return f(t, {k: t.leaf(v, k) for k, v in p.items()}).value

    work = {k: np.asarray(v, dtype=numeric_dtype).copy() for k, v in params.items()}
    h = np.asarray(step, dtype=numeric_dtype)
    worst = 0.0
    for k, arr in work.items():
        flat = arr.reshape(-1)
        a_flat = analytic[k].reshape(-1)
        if entries is None:
            idx = range(flat.size)
        elif k in entries:
            idx = [int(i) for i in entries[k]]
        else:
            continue
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = value(work)
            flat[i] = orig - h
            down = value(work)
            flat[i] = orig
            num = float((up - down) / (2 * h))
            a = float(a_flat[i])
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst

"""Dense tensors with a tape-based reverse-mode differentiation engine.

Values are stored as numpy arrays in row-major order. Layout for images is
``(batch, height, width, channels)`` throughout the package.

Precision is global: 32-bit by default, 64-bit when ``VGSN_FLOAT64=1`` is set
in the environment or inside a ``precision("float64")`` block. Gradient checks
need the 64-bit mode.
"""

from __future__ import annotations

import contextlib
import math
import os
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "NonFiniteError",
    "Rng",
    "Tape",
    "Tensor",
    "TapeError",
    "backward",
    "get_dtype",
    "grad_check",
    "precision",
    "seeded_normal",
    "set_precision",
    "tensor_from",
]


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class TapeError(RuntimeError):
    """Raised for misuse of the computation tape."""


_DTYPES = {"float32": np.float32, "float64": np.float64}
_dtype = np.float64 if os.environ.get("VGSN_FLOAT64", "") not in ("", "0") else np.float32


def get_dtype():
    return _dtype


def set_precision(name: str) -> None:
    global _dtype
    try:
        _dtype = _DTYPES[name]
    except KeyError:
        raise ValueError(f"unknown precision {name!r}; expected float32 or float64") from None


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the global float precision."""
    global _dtype
    saved = _dtype
    set_precision(name)
    try:
        yield
    finally:
        _dtype = saved


def check_finite(array: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(array).all():
        raise NonFiniteError(f"non-finite value produced by {where}")
    return array


class Tensor:
    """An n-dimensional float array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        array = np.asarray(data)
        if array.dtype != _dtype:
            array = array.astype(_dtype)
        if array.ndim == 0:
            array = array.reshape(())
        self.data = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __getitem__(self, index):
        return Tensor(self.data[index])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # arithmetic used by the layers; each goes through the tape
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def tensor_from(shape: Sequence[int], values: Sequence[float], requires_grad: bool = False) -> Tensor:
    """Build a tensor of ``shape`` from a flat row-major list of values."""
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ValueError(f"shape {shape} has a non-positive extent")
    values = np.asarray(values, dtype=np.float64).ravel()
    if math.prod(shape) != values.size:
        raise ValueError(f"shape {shape} needs {math.prod(shape)} values, got {values.size}")
    check_finite(values, "tensor_from")
    return Tensor(values.reshape(shape), requires_grad=requires_grad)


# --------------------------------------------------------------------------
# Random numbers


class Rng:
    """Seeded generator with a frozen algorithm.

    Uniform bits come from the PCG64 bit generator (raw 64-bit outputs, whose
    stream numpy keeps stable across releases). Doubles take the top 53 bits.
    Normal variates use the Box-Muller transform on pairs of doubles. Child
    generators are derived with ``SeedSequence``, which is also stable.
    """

    def __init__(self, seed: int | Sequence[int]):
        if isinstance(seed, (int, np.integer)):
            seed = [int(seed) & 0xFFFFFFFFFFFFFFFF]
        self.seed = tuple(int(s) for s in seed)
        self._bits = np.random.PCG64(np.random.SeedSequence(list(self.seed)))

    def derive(self, *keys: int) -> "Rng":
        """Independent generator keyed on this seed plus ``keys``."""
        return Rng(self.seed + tuple(int(k) for k in keys))

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1)."""
        raw = self._bits.random_raw(n)
        return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[:m]  # in (0, 1], keeps log finite
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        order = np.arange(n)
        u = self.uniform(max(n - 1, 0))
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            order[i], order[j] = order[j], order[i]
        return order


def seeded_normal(shape: Sequence[int], rng: Rng) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ValueError(f"shape {shape} has a non-positive extent")
    return Tensor(rng.normal(math.prod(shape)).reshape(shape))


# --------------------------------------------------------------------------
# Tape


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside the block on tensors
    that require gradients are recorded, and :meth:`backward` replays them in
    reverse.
    """

    _active: list["Tape"] = []

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._active.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _current_tape() -> Tape | None:
    return Tape._active[-1] if Tape._active else None


def record(inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn: Callable, where: str) -> Tensor:
    """Wrap an op result; register ``backward_fn`` when gradients are needed.

    ``backward_fn(grad_out)`` returns one gradient array (or None) per input.
    """
    check_finite(out_data, where)
    out = Tensor(out_data)
    tape = _current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(tuple(inputs), out, backward_fn))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked leaf tensor."""
    if loss.data.size != 1:
        raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
    if not any(node.output is loss for node in tape.nodes):
        raise TapeError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for tensor, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    produced = {id(node.output) for node in tape.nodes}
    seen = set()
    for node in tape.nodes:
        for tensor in node.inputs:
            key = id(tensor)
            if key in grads and key not in produced and key not in seen:
                seen.add(key)
                g = grads[key]
                tensor.grad = g if tensor.grad is None else tensor.grad + g


# --------------------------------------------------------------------------
# Elementwise and reduction primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    return record((a, b), a.data + b.data, lambda g: (g, g), "add")


def scale(a: Tensor, c: float) -> Tensor:
    return record((a,), a.data * c, lambda g: (g * c,), "scale")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")
    return record((a, b), a.data * b.data, lambda g: (g * b.data, g * a.data), "mul")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record((a,), out, lambda g: (g * out,), "exp")


def sum_all(a: Tensor) -> Tensor:
    return record((a,), np.asarray(a.data.sum()), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    return record((a,), np.asarray(a.data.mean()), lambda g: (np.full(a.shape, g / n, dtype=a.data.dtype),), "mean")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return record((a,), a.data.reshape(shape), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record((a,), a.data.transpose(axes).copy(), lambda g: (g.transpose(inverse),), "transpose")


# --------------------------------------------------------------------------
# Gradient checking


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    report: dict | None = None,
) -> float:
    """Compare tape gradients of ``f`` with central finite differences.

    ``f`` takes no arguments and reads ``params`` by reference; each element is
    perturbed in place. Returns the maximum over all elements of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``. If ``report``
    is given, it receives the per-tensor maxima keyed by tensor name.
    """
    if get_dtype() != np.float64:
        raise RuntimeError("grad_check requires 64-bit precision")
    for p in params:
        p.grad = None
        p.requires_grad = True
    with Tape() as tape:
        loss = f()
    if loss.data.size != 1:
        raise TapeError("grad_check needs a scalar function")
    check_finite(loss.data, "grad_check")
    if any(node.output is loss for node in tape.nodes):
        tape.backward(loss)
    worst = 0.0
    for index, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = f().item()
            flat[i] = orig - step
            minus = f().item()
            flat[i] = orig
            numeric[i] = (plus - minus) / (2.0 * step)
        check_finite(numeric, "grad_check")
        a = analytic.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        err = float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
        if report is not None:
            report[p.name or f"param{index}"] = err
        worst = max(worst, err)
    return worst

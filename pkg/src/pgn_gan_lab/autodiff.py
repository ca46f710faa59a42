"""
Reverse-mode automatic differentiation over dense float64 tensors.

Operations are recorded on the active Tape. The backward pass is written in
terms of the same recorded operations, so a gradient computed with
``create_graph=True`` can be differentiated again.
"""

import math
import threading
from dataclasses import dataclass
from typing import (
    Callable,
    Dict,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

TensorLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
VJP = Callable[
    ["Tensor", Tuple["Tensor", ...], "Tensor", Tuple[bool, ...]],
    Tuple[Optional["Tensor"], ...],
]


class AutodiffError(Exception):
    """Base exception for autodiff errors."""

    pass


class ShapeMismatchError(AutodiffError):
    """Operand shapes do not conform."""

    def __init__(self, op: str, left: Sequence[int], right: Sequence[int]):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f"{op}: incompatible shapes {self.left} and {self.right}")


class TapeError(AutodiffError):
    """Invalid use of a computation tape."""

    pass


class VariableNotOnTapeError(TapeError):
    """A requested tensor was never recorded or watched on the tape."""

    pass


class TapeReleasedError(TapeError):
    """The tape was released by a first-order backward pass."""

    pass


class NonScalarOutputError(AutodiffError):
    """Backward was requested from a non-scalar output."""

    pass


class NonFiniteValueError(AutodiffError):
    """A function produced a non-finite value."""

    def __init__(self, message: str, coordinate: Optional[Tuple[int, ...]] = None):
        self.coordinate = coordinate
        super().__init__(message)


class Tensor:
    """Immutable dense array of 64-bit floats in row-major order."""

    __slots__ = ("_data",)
    # Makes ``ndarray * Tensor`` defer to Tensor.__rmul__.
    __array_priority__ = 1000

    def __init__(self, data: TensorLike):
        if isinstance(data, Tensor):
            self._data = data._data
            return
        array = np.array(data, dtype=np.float64)
        array.setflags(write=False)
        self._data = array

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        """Wrap a freshly computed array without copying it."""
        tensor = cls.__new__(cls)
        array = np.asarray(array, dtype=np.float64)
        if array.flags.writeable:
            array.setflags(write=False)
        tensor._data = array
        return tensor

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls._wrap(np.zeros(tuple(shape)))

    @classmethod
    def ones(cls, shape: Sequence[int]) -> "Tensor":
        return cls._wrap(np.ones(tuple(shape)))

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the elements."""
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    def numpy(self) -> np.ndarray:
        """Writable copy of the elements."""
        return np.array(self._data, copy=True)

    def item(self) -> float:
        if self.size != 1:
            raise NonScalarOutputError(f"item() on tensor of shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self._data)))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={np.array2string(self._data, precision=6)})"

    def __len__(self) -> int:
        return self.shape[0]

    def __add__(self, other: TensorLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: TensorLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: TensorLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: TensorLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: TensorLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: TensorLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: TensorLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: TensorLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: TensorLike) -> "Tensor":
        return matmul(self, other)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return sum(self, axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        return mean(self, axis)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value: TensorLike) -> Tensor:
    """Return ``value`` as a Tensor, wrapping constants."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass
class _Node:
    """One recorded operation."""

    op: str
    inputs: Tuple[Optional[int], ...]
    input_tensors: Tuple[Tensor, ...]
    output: Tensor
    kernel: Optional[Callable[..., np.ndarray]]
    vjp: Optional[VJP]
    kink: Optional[float] = None


_local = threading.local()


def _tape_stack() -> List["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    """The tape currently recording on this thread, if any."""
    stack = _tape_stack()
    if not stack:
        return None
    tape = stack[-1]
    return tape if tape._recording else None


class Tape:
    """
    Ordered record of operations supporting reverse-mode differentiation.

    A tape is bound to one thread of execution. Nodes are appended in
    execution order, so inputs always precede the nodes that consume them.

    Example:
        with Tape() as tape:
            x = tape.watch(Tensor([1.0, 2.0, 3.0]))
            y = sum(x * x)
        grads = backward(tape, y, {"x": x})
    """

    def __init__(self):
        self._nodes: List[_Node] = []
        self._index: Dict[int, int] = {}
        self._recording = True
        self._released = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        elif self in stack:
            stack.remove(self)

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, tensor: object) -> bool:
        return isinstance(tensor, Tensor) and self._find(tensor) is not None

    @property
    def released(self) -> bool:
        return self._released

    def watch(self, value: TensorLike) -> Tensor:
        """Register a leaf variable and return it."""
        self._check_alive()
        tensor = as_tensor(value)
        if self._find(tensor) is None:
            self._add(_Node("leaf", (), (), tensor, None, None))
        return tensor

    def watch_all(self, values: Mapping[str, TensorLike]) -> Dict[str, Tensor]:
        """Watch every tensor of a named mapping."""
        return {name: self.watch(value) for name, value in values.items()}

    def kink_margin(self) -> float:
        """Smallest distance of any kinked operation input from its kink."""
        margins = [node.kink for node in self._nodes if node.kink is not None]
        return min(margins) if margins else math.inf

    def replay(self) -> bool:
        """Re-run recorded kernels from the leaves; True if bit-identical."""
        self._check_alive()
        values: Dict[int, np.ndarray] = {}
        for position, node in enumerate(self._nodes):
            if node.kernel is None:
                values[position] = node.output.data
                continue
            arguments = [
                values[index] if index is not None else tensor.data
                for index, tensor in zip(node.inputs, node.input_tensors)
            ]
            result = np.asarray(node.kernel(*arguments), dtype=np.float64)
            recorded = node.output.data
            if result.shape != recorded.shape or result.tobytes() != recorded.tobytes():
                return False
            values[position] = result
        return True

    def release(self) -> None:
        """Drop recorded nodes and their saved buffers."""
        self._nodes = []
        self._index = {}
        self._released = True

    def gradient(
        self,
        output: Tensor,
        wrt: Sequence[Tensor],
        create_graph: bool = False,
        retain_graph: Optional[bool] = None,
    ) -> List[Tensor]:
        """
        Gradients of a scalar output with respect to recorded tensors.

        Args:
            output: Scalar tensor recorded on this tape.
            wrt: Tensors recorded or watched on this tape.
            create_graph: Record the backward pass so it can be differentiated.
            retain_graph: Keep the tape usable afterwards. Defaults to
                ``create_graph``; a first-order pass releases the tape.

        Returns:
            One gradient per entry of ``wrt``, each shaped like its variable.
        """
        self._check_alive()
        if output.size != 1:
            raise NonScalarOutputError(
                f"backward needs a scalar output, got shape {output.shape}"
            )
        output_index = self._lookup(output, "output")
        targets = [self._lookup(variable, f"wrt[{i}]") for i, variable in enumerate(wrt)]
        target_set = set(targets)
        needed = self._needed(target_set, output_index)

        stack = _tape_stack()
        previous = self._recording
        self._recording = create_graph
        stack.append(self)
        try:
            grads: Dict[int, Tensor] = {output_index: Tensor.ones(output.shape)}
            for position in range(output_index, -1, -1):
                if position in target_set:
                    grad = grads.get(position)
                else:
                    grad = grads.pop(position, None)
                if grad is None:
                    continue
                node = self._nodes[position]
                if node.vjp is None:
                    continue
                needs = tuple(index is not None and needed[index] for index in node.inputs)
                if not any(needs):
                    continue
                input_grads = node.vjp(grad, node.input_tensors, node.output, needs)
                for index, input_grad, need in zip(node.inputs, input_grads, needs):
                    if not need or input_grad is None:
                        continue
                    accumulated = grads.get(index)
                    grads[index] = input_grad if accumulated is None else add(accumulated, input_grad)
        finally:
            stack.pop()
            self._recording = previous

        results = [
            grads[index] if index in grads else Tensor.zeros(variable.shape)
            for index, variable in zip(targets, wrt)
        ]
        keep = create_graph if retain_graph is None else retain_graph
        if not keep:
            self.release()
        return results

    def _needed(self, targets: set, limit: int) -> List[bool]:
        """Mark nodes from which some target is reachable backwards."""
        needed = [False] * (limit + 1)
        for position in range(limit + 1):
            if position in targets:
                needed[position] = True
                continue
            node = self._nodes[position]
            needed[position] = any(index is not None and needed[index] for index in node.inputs)
        return needed

    def _check_alive(self) -> None:
        if self._released:
            raise TapeReleasedError(
                "Tape was released by a first-order backward pass; "
                "pass retain_graph=True to reuse it."
            )

    def _find(self, tensor: Tensor) -> Optional[int]:
        position = self._index.get(id(tensor))
        if position is None or self._nodes[position].output is not tensor:
            return None
        return position

    def _lookup(self, tensor: Tensor, role: str) -> int:
        position = self._find(tensor)
        if position is None:
            raise VariableNotOnTapeError(
                f"{role} (shape {tensor.shape}) is not recorded on this tape; "
                "watch it before use."
            )
        return position

    def _add(self, node: _Node) -> None:
        self._index[id(node.output)] = len(self._nodes)
        self._nodes.append(node)

    def _record(
        self,
        op: str,
        kernel: Callable[..., np.ndarray],
        inputs: Tuple[Tensor, ...],
        output: Tensor,
        vjp: VJP,
        kink: Optional[float],
    ) -> None:
        indices = tuple(self._find(tensor) for tensor in inputs)
        self._add(_Node(op, indices, inputs, output, kernel, vjp, kink))


@dataclass
class GradientMap(Mapping[str, Tensor]):
    """Gradients keyed by variable name."""

    grads: Dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.grads[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.grads)

    def __len__(self) -> int:
        return len(self.grads)


def backward(
    tape: Tape,
    output: Tensor,
    wrt: Mapping[str, Tensor],
    create_graph: bool = False,
    retain_graph: Optional[bool] = None,
) -> GradientMap:
    """
    Reverse-mode gradients of ``output`` for each named variable.

    Raises:
        NonScalarOutputError: If ``output`` is not a scalar.
        VariableNotOnTapeError: If a variable is not on ``tape``.
    """
    names = list(wrt)
    grads = tape.gradient(
        output, [wrt[name] for name in names], create_graph=create_graph, retain_graph=retain_graph
    )
    return GradientMap(dict(zip(names, grads)))


def _apply(
    op: str,
    kernel: Callable[..., np.ndarray],
    inputs: Tuple[Tensor, ...],
    vjp: VJP,
    kink: Optional[Callable[..., float]] = None,
) -> Tensor:
    arrays = [tensor.data for tensor in inputs]
    output = Tensor._wrap(kernel(*arrays))
    tape = active_tape()
    if tape is not None:
        margin = kink(*arrays, output.data) if kink is not None else None
        tape._record(op, kernel, inputs, output, vjp, margin)
    return output


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeMismatchError(op, a.shape, b.shape)


def _reduce_to(grad: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Sum a broadcast gradient back onto a scalar operand."""
    if shape == () and grad.shape != ():
        return sum(grad)
    return grad


def _abs_margin(x: np.ndarray, *_: np.ndarray) -> float:
    return float(np.min(np.abs(x))) if x.size else math.inf


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("add", a, b)

    def vjp(g, inputs, out, needs):
        x, y = inputs
        return (
            _reduce_to(g, x.shape) if needs[0] else None,
            _reduce_to(g, y.shape) if needs[1] else None,
        )

    return _apply("add", np.add, (a, b), vjp)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("sub", a, b)

    def vjp(g, inputs, out, needs):
        x, y = inputs
        return (
            _reduce_to(g, x.shape) if needs[0] else None,
            _reduce_to(neg(g), y.shape) if needs[1] else None,
        )

    return _apply("sub", np.subtract, (a, b), vjp)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("mul", a, b)

    def vjp(g, inputs, out, needs):
        x, y = inputs
        return (
            _reduce_to(mul(g, y), x.shape) if needs[0] else None,
            _reduce_to(mul(g, x), y.shape) if needs[1] else None,
        )

    return _apply("mul", np.multiply, (a, b), vjp)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("div", a, b)

    def vjp(g, inputs, out, needs):
        x, y = inputs
        return (
            _reduce_to(div(g, y), x.shape) if needs[0] else None,
            _reduce_to(neg(div(mul(g, out), y)), y.shape) if needs[1] else None,
        )

    return _apply("div", np.divide, (a, b), vjp)


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)

    def vjp(g, inputs, out, needs):
        return (neg(g),)

    return _apply("neg", np.negative, (a,), vjp)


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)

    def vjp(g, inputs, out, needs):
        x, y = inputs
        return (
            matmul(g, transpose(y)) if needs[0] else None,
            matmul(transpose(x), g) if needs[1] else None,
        )

    return _apply("matmul", np.matmul, (a, b), vjp)


def transpose(a: TensorLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    order = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(order) != list(range(a.ndim)):
        raise ShapeMismatchError("transpose", a.shape, order)
    inverse = tuple(int(i) for i in np.argsort(order))

    def kernel(x):
        return np.ascontiguousarray(np.transpose(x, order))

    def vjp(g, inputs, out, needs):
        return (transpose(g, inverse),)

    return _apply("transpose", kernel, (a,), vjp)


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    target = tuple(int(extent) for extent in shape)
    try:
        resolved = np.reshape(a.data, target).shape
    except ValueError:
        raise ShapeMismatchError("reshape", a.shape, target) from None
    source = a.shape

    def kernel(x):
        return np.reshape(x, resolved)

    def vjp(g, inputs, out, needs):
        return (reshape(g, source),)

    return _apply("reshape", kernel, (a,), vjp)


def expand(a: TensorLike, axis: int, count: int) -> Tensor:
    """Insert ``axis`` and replicate the tensor ``count`` times along it."""
    a = as_tensor(a)

    def kernel(x):
        return np.repeat(np.expand_dims(x, axis), count, axis=axis)

    def vjp(g, inputs, out, needs):
        return (sum(g, axis),)

    return _apply("expand", kernel, (a,), vjp)


def sum(a: TensorLike, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    source = a.shape

    def kernel(x):
        return np.sum(x, axis=axis)

    def vjp(g, inputs, out, needs):
        if axis is None:
            return (mul(g, Tensor.ones(source)),)
        return (expand(g, axis, source[axis]),)

    return _apply("sum", kernel, (a,), vjp)


def mean(a: TensorLike, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / count)


def abs(a: TensorLike) -> Tensor:  # noqa: A001
    """Elementwise absolute value; the derivative at 0 is +1."""
    a = as_tensor(a)

    def vjp(g, inputs, out, needs):
        (x,) = inputs
        return (mul(g, Tensor._wrap(np.where(x.data >= 0.0, 1.0, -1.0))),)

    return _apply("abs", np.abs, (a,), vjp, kink=_abs_margin)


def relu(a: TensorLike) -> Tensor:
    """max(x, 0); the derivative at 0 is 1 (right branch)."""
    a = as_tensor(a)

    def kernel(x):
        return np.where(x >= 0.0, x, 0.0)

    def vjp(g, inputs, out, needs):
        (x,) = inputs
        return (mul(g, Tensor._wrap((x.data >= 0.0).astype(np.float64))),)

    return _apply("relu", kernel, (a,), vjp, kink=_abs_margin)


def leaky_relu(a: TensorLike, slope: float) -> Tensor:
    """x for x >= 0, slope * x otherwise; the derivative at 0 is 1."""
    a = as_tensor(a)

    def kernel(x):
        return np.where(x >= 0.0, x, slope * x)

    def vjp(g, inputs, out, needs):
        (x,) = inputs
        return (mul(g, Tensor._wrap(np.where(x.data >= 0.0, 1.0, slope))),)

    return _apply("leaky_relu", kernel, (a,), vjp, kink=_abs_margin)


def l2_norm(a: TensorLike, axis: Optional[int] = None) -> Tensor:
    """
    Euclidean norm over all elements or along ``axis``.

    The derivative at the zero vector is defined as the zero vector.
    """
    a = as_tensor(a)

    def kernel(x):
        return np.sqrt(np.sum(x * x, axis=axis))

    def margin(x, out):
        return float(np.min(out)) if out.size else math.inf

    def vjp(g, inputs, out, needs):
        (x,) = inputs
        # x is zero wherever the norm is, so shifting those denominators to 1 yields 0.
        safe = add(out, Tensor._wrap((out.data == 0.0).astype(np.float64)))
        scale = div(g, safe)
        if axis is None:
            return (mul(x, scale),)
        return (mul(x, expand(scale, axis, x.shape[axis])),)

    return _apply("l2_norm", kernel, (a,), vjp, kink=margin)


def square(a: TensorLike) -> Tensor:
    a = as_tensor(a)

    def vjp(g, inputs, out, needs):
        (x,) = inputs
        return (mul(g, mul(x, 2.0)),)

    return _apply("square", np.square, (a,), vjp)


def sqrt(a: TensorLike) -> Tensor:
    a = as_tensor(a)

    def vjp(g, inputs, out, needs):
        return (div(g, mul(out, 2.0)),)

    return _apply("sqrt", np.sqrt, (a,), vjp)


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)

    def vjp(g, inputs, out, needs):
        return (mul(g, out),)

    return _apply("exp", np.exp, (a,), vjp)


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)

    def vjp(g, inputs, out, needs):
        (x,) = inputs
        return (div(g, x),)

    return _apply("log", np.log, (a,), vjp)


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)

    def vjp(g, inputs, out, needs):
        return (mul(g, sub(1.0, square(out))),)

    return _apply("tanh", np.tanh, (a,), vjp)


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)

    def kernel(x):
        return 0.5 * (1.0 + np.tanh(0.5 * x))

    def vjp(g, inputs, out, needs):
        return (mul(g, mul(out, sub(1.0, out))),)

    return _apply("sigmoid", kernel, (a,), vjp)


def softplus(a: TensorLike) -> Tensor:
    """log(1 + exp(x)), evaluated without overflow."""
    a = as_tensor(a)

    def kernel(x):
        return np.logaddexp(0.0, x)

    def vjp(g, inputs, out, needs):
        (x,) = inputs
        return (mul(g, sigmoid(x)),)

    return _apply("softplus", kernel, (a,), vjp)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _im2col_kernel(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    batch, channels = x.shape[0], x.shape[1]
    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    padded = np.pad(x, pad)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    rows, cols = windows.shape[2], windows.shape[3]
    patches = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5))
    return patches.reshape(batch * rows * cols, channels * kernel * kernel)


def _col2im_kernel(
    columns: np.ndarray,
    input_shape: Tuple[int, int, int, int],
    kernel: int,
    stride: int,
    padding: int,
) -> np.ndarray:
    batch, channels, height, width = input_shape
    rows = conv_output_size(height, kernel, stride, padding)
    cols = conv_output_size(width, kernel, stride, padding)
    blocks = columns.reshape(batch, rows, cols, channels, kernel, kernel)
    padded = np.zeros((batch, channels, height + 2 * padding, width + 2 * padding))
    for i in range(kernel):
        for j in range(kernel):
            padded[:, :, i : i + stride * rows : stride, j : j + stride * cols : stride] += blocks[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return padded[:, :, padding : padding + height, padding : padding + width]


def im2col(a: TensorLike, kernel: int, stride: int = 1, padding: int = 0) -> Tensor:
    """
    Unfold (N, C, H, W) into patch rows of shape (N*Ho*Wo, C*k*k).

    Rows are ordered (n, ho, wo); columns (c, ki, kj).
    """
    a = as_tensor(a)
    if a.ndim != 4:
        raise ShapeMismatchError("im2col", a.shape, (kernel, kernel))
    source = tuple(a.shape)

    def kernel_fn(x):
        return _im2col_kernel(x, kernel, stride, padding)

    def vjp(g, inputs, out, needs):
        return (col2im(g, source, kernel, stride, padding),)

    return _apply("im2col", kernel_fn, (a,), vjp)


def col2im(
    a: TensorLike,
    input_shape: Sequence[int],
    kernel: int,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Adjoint of im2col: scatter-add patch rows back onto (N, C, H, W)."""
    a = as_tensor(a)
    shape = tuple(int(extent) for extent in input_shape)

    def kernel_fn(x):
        return _col2im_kernel(x, shape, kernel, stride, padding)

    def vjp(g, inputs, out, needs):
        return (im2col(g, kernel, stride, padding),)

    return _apply("col2im", kernel_fn, (a,), vjp)


def finite_difference_gradient(
    f: Callable[[Tensor], TensorLike], x: TensorLike, h: float = 1e-5
) -> Tensor:
    """
    Central-difference gradient of a scalar function.

    Raises:
        ValueError: If ``h`` is not positive.
        NonFiniteValueError: If ``f`` is not finite at a perturbed point.
    """
    if not h > 0.0:
        raise ValueError(f"Step must be positive, got {h}")
    point = as_tensor(x).numpy()
    flat = point.reshape(-1)
    grad = np.zeros(point.size)
    for i in range(point.size):
        original = flat[i]
        flat[i] = original + h
        forward = _scalar_value(f(Tensor(point)))
        flat[i] = original - h
        backward_value = _scalar_value(f(Tensor(point)))
        flat[i] = original
        if not (math.isfinite(forward) and math.isfinite(backward_value)):
            coordinate = tuple(int(c) for c in np.unravel_index(i, point.shape))
            raise NonFiniteValueError(
                f"Function is not finite when perturbing coordinate {coordinate}",
                coordinate=coordinate,
            )
        grad[i] = (forward - backward_value) / (2.0 * h)
    return Tensor._wrap(grad.reshape(point.shape))


def _scalar_value(value: TensorLike) -> float:
    tensor = as_tensor(value)
    if tensor.size != 1:
        raise NonScalarOutputError(f"Expected a scalar function value, got shape {tensor.shape}")
    return tensor.item()

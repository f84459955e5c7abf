# This file is part of osteoforge
# Copyright (C) 2026  osteoforge contributors
#
# osteoforge is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# osteoforge is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with osteoforge.  If not, see <http://www.gnu.org/licenses/>.
"""
Reverse-mode automatic differentiation over dense numpy arrays (NCHW for
image batches), with just the layers the U-Net and loss network need.

Each operation returns a Tensor remembering its parents and a closure
mapping the output gradient to parent gradients. backward() walks this graph
in reverse topological order, visiting each node once.
"""
import contextlib
import numpy
from numpy.lib.stride_tricks import sliding_window_view
from .common import ConfigError, ShapeError, getRandomGenerator

__all__ = (
    'Tensor',
    'noGrad',
    'conv2d',
    'maxpool2',
    'upsampleNearest2',
    'concatChannels',
    'repeatChannels',
    'channelAffine',
    'relu',
    'tanh',
    'gaussianNoise',
    'reduceL1',
    'reduceMSE',
    'weightedSum',
    'backward',
    'gradCheck',
)

_recording = [True]

@contextlib.contextmanager
def noGrad():
    """
    Context manager: operations run inside it do not record a graph.
    """
    previous = _recording[0]
    _recording[0] = False
    try:
        yield
    finally:
        _recording[0] = previous

class Tensor:
    """
    A node in the computation graph.

    value (numpy array)
    requires_grad (bool)
        Leaf tensors with this set receive gradients in their grad attribute
        on backward().
    """
    def __init__(self, value, requires_grad=False, name=None, _parent_list=(), _backward=None):
        value = numpy.asarray(value)
        if value.dtype.kind != 'f':
            value = value.astype(numpy.float64)
        self.value = value
        self.requires_grad = requires_grad
        self.name = name
        self.grad = None
        self._parent_list = _parent_list
        self._backward = _backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def isLeaf(self):
        return not self._parent_list

    def zeroGrad(self):
        self.grad = None

    def item(self):
        return self.value.item()

    def __repr__(self):
        return 'Tensor(shape=%r, dtype=%s, requires_grad=%r%s)' % (
            self.shape,
            self.dtype,
            self.requires_grad,
            '' if self.name is None else ', name=%r' % (self.name, ),
        )

    def __add__(self, other):
        return _add(self, other)
    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, _scale(asTensor(other, self.dtype), -1))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return _multiply(self, other)
        return _scale(self, other)
    __rmul__ = __mul__

    def __neg__(self):
        return _scale(self, -1)

    def sum(self):
        return _reduceSum(self, 1)

    def mean(self):
        return _reduceSum(self, 1 / self.value.size)

def asTensor(value, dtype=None):
    """
    Wrap value in a constant Tensor unless it already is one.
    """
    if isinstance(value, Tensor):
        return value
    value = numpy.asarray(value)
    if dtype is not None:
        value = value.astype(dtype)
    return Tensor(value)

def _makeResult(value, parent_list, backward_function):
    """
    Build an operation result. backward_function maps the output gradient to
    one gradient per parent (None for parents which do not need one).
    """
    requires_grad = _recording[0] and any(x.requires_grad for x in parent_list)
    if not requires_grad:
        return Tensor(value)
    return Tensor(
        value,
        requires_grad=True,
        _parent_list=tuple(parent_list),
        _backward=backward_function,
    )

def _add(a, b):
    b = asTensor(b, a.dtype)
    if a.shape != b.shape:
        raise ShapeError('add: shape %r vs %r' % (a.shape, b.shape), field='shape')
    return _makeResult(
        a.value + b.value,
        (a, b),
        lambda grad: (grad, grad),
    )

def _scale(a, factor):
    return _makeResult(
        a.value * factor,
        (a, ),
        lambda grad: (grad * factor, ),
    )

def _multiply(a, b):
    if a.shape != b.shape:
        raise ShapeError('multiply: shape %r vs %r' % (a.shape, b.shape), field='shape')
    return _makeResult(
        a.value * b.value,
        (a, b),
        lambda grad: (grad * b.value, grad * a.value),
    )

def _reduceSum(a, factor):
    shape = a.shape
    return _makeResult(
        numpy.sum(a.value) * factor,
        (a, ),
        lambda grad: (numpy.full(shape, grad * factor, dtype=a.dtype), ),
    )

def _getWindows(padded, kernel_size, dilation, height, width):
    """
    View of shape (N, C, H, W, k, k): the dilated k x k neighbourhood of
    every output position.
    """
    span = dilation * (kernel_size - 1) + 1
    windows = sliding_window_view(padded, (span, span), axis=(2, 3))
    return windows[:, :, :height, :width, ::dilation, ::dilation]

def conv2d(x, weight, bias, dilation=1):
    """
    Stride-1, same-padded 2D cross-correlation.

    x (Tensor, N x Cin x H x W)
    weight (Tensor, Cout x Cin x k x k), k odd
    bias (Tensor, Cout)
    dilation (int)
        Spacing between kernel taps.
    """
    if x.value.ndim != 4 or weight.value.ndim != 4:
        raise ShapeError('conv2d expects 4D input and weight', field='shape')
    batch, in_channels, height, width = x.shape
    out_channels, weight_in_channels, kernel_size, kernel_width = weight.shape
    if min(x.shape) < 1 or min(weight.shape) < 1:
        raise ShapeError('conv2d: non-positive dimension', field='shape')
    if weight_in_channels != in_channels:
        raise ShapeError(
            'conv2d: input has %i channels, weight expects %i' % (
                in_channels, weight_in_channels,
            ),
            field='channels',
        )
    if kernel_size != kernel_width or kernel_size % 2 == 0:
        raise ShapeError('conv2d: kernel must be square and odd', field='kernel')
    if bias.shape != (out_channels, ):
        raise ShapeError('conv2d: bias shape %r' % (bias.shape, ), field='bias')
    pad = dilation * (kernel_size - 1) // 2
    padded = numpy.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = _getWindows(padded, kernel_size, dilation, height, width)
    # (N, H, W, Cout) -> (N, Cout, H, W)
    value = numpy.tensordot(
        windows,
        weight.value,
        axes=((1, 4, 5), (1, 2, 3)),
    ).transpose(0, 3, 1, 2) + bias.value[numpy.newaxis, :, numpy.newaxis, numpy.newaxis]

    def backwardConv2d(grad):
        grad_weight = grad_bias = grad_x = None
        if weight.requires_grad:
            grad_weight = numpy.tensordot(
                grad,
                windows,
                axes=((0, 2, 3), (0, 2, 3)),
            )
        if bias.requires_grad:
            grad_bias = grad.sum(axis=(0, 2, 3))
        if x.requires_grad:
            # (N, H, W, Cin, k, k)
            grad_windows = numpy.tensordot(grad, weight.value, axes=((1, ), (0, ))).transpose(0, 3, 1, 2, 4, 5)
            grad_padded = numpy.zeros(padded.shape, dtype=grad.dtype)
            for row in range(kernel_size):
                for col in range(kernel_size):
                    grad_padded[
                        :,
                        :,
                        row * dilation:row * dilation + height,
                        col * dilation:col * dilation + width,
                    ] += grad_windows[..., row, col]
            grad_x = grad_padded[:, :, pad:pad + height, pad:pad + width]
        return grad_x, grad_weight, grad_bias

    return _makeResult(value, (x, weight, bias), backwardConv2d)

def maxpool2(x):
    """
    2x2 max pooling with stride 2. The gradient goes to the maximum, the
    first one in row-major window order on ties.
    """
    batch, channels, height, width = x.shape
    if height % 2 or width % 2:
        raise ShapeError(
            'maxpool2 needs even dimensions, got %ix%i' % (height, width),
            field='shape',
        )
    blocks = x.value.reshape(
        batch, channels, height // 2, 2, width // 2, 2,
    ).transpose(0, 1, 2, 4, 3, 5).reshape(
        batch, channels, height // 2, width // 2, 4,
    )
    argmax = blocks.argmax(axis=-1)
    value = numpy.take_along_axis(blocks, argmax[..., numpy.newaxis], axis=-1)[..., 0]

    def backwardMaxpool2(grad):
        grad_blocks = numpy.zeros(blocks.shape, dtype=grad.dtype)
        numpy.put_along_axis(
            grad_blocks,
            argmax[..., numpy.newaxis],
            grad[..., numpy.newaxis],
            axis=-1,
        )
        return (
            grad_blocks.reshape(
                batch, channels, height // 2, width // 2, 2, 2,
            ).transpose(0, 1, 2, 4, 3, 5).reshape(x.shape),
        )

    return _makeResult(value, (x, ), backwardMaxpool2)

def upsampleNearest2(x):
    """
    Replicate every pixel into a 2x2 block.
    """
    batch, channels, height, width = x.shape
    value = x.value.repeat(2, axis=2).repeat(2, axis=3)

    def backwardUpsample(grad):
        return (
            grad.reshape(batch, channels, height, 2, width, 2).sum(axis=(3, 5)),
        )

    return _makeResult(value, (x, ), backwardUpsample)

def concatChannels(a, b):
    """
    Concatenate two NCHW tensors along channels.
    """
    if (a.shape[0], ) + a.shape[2:] != (b.shape[0], ) + b.shape[2:]:
        raise ShapeError(
            'concatChannels: %r vs %r' % (a.shape, b.shape),
            field='shape',
        )
    split = a.shape[1]
    return _makeResult(
        numpy.concatenate((a.value, b.value), axis=1),
        (a, b),
        lambda grad: (grad[:, :split], grad[:, split:]),
    )

def repeatChannels(x, count):
    """
    Repeat a single-channel NCHW tensor count times along channels.
    """
    if x.shape[1] != 1:
        raise ShapeError(
            'repeatChannels expects one channel, got %i' % (x.shape[1], ),
            field='channels',
        )
    return _makeResult(
        numpy.repeat(x.value, count, axis=1),
        (x, ),
        lambda grad: (grad.sum(axis=1, keepdims=True), ),
    )

def channelAffine(x, offset, scale):
    """
    Per-channel (x + offset[c]) * scale[c] on an NCHW tensor, with constant
    offset and scale.
    """
    offset = numpy.asarray(offset, dtype=x.dtype)[numpy.newaxis, :, numpy.newaxis, numpy.newaxis]
    scale = numpy.asarray(scale, dtype=x.dtype)[numpy.newaxis, :, numpy.newaxis, numpy.newaxis]
    return _makeResult(
        (x.value + offset) * scale,
        (x, ),
        lambda grad: (grad * scale, ),
    )

def relu(x):
    """
    max(x, 0). The gradient at exactly 0 is 0.
    """
    positive = x.value > 0
    return _makeResult(
        numpy.where(positive, x.value, 0).astype(x.dtype),
        (x, ),
        lambda grad: (grad * positive, ),
    )

def tanh(x):
    """
    Hyperbolic tangent, kept inside the open interval (-1, 1): where the
    rounded result would be +-1, the nearest representable value is used
    instead, so the gradient never vanishes exactly.
    """
    value = numpy.tanh(x.value)
    limit = numpy.nextafter(value.dtype.type(1), value.dtype.type(0))
    value = numpy.clip(value, -limit, limit)
    return _makeResult(
        value,
        (x, ),
        lambda grad: (grad * (1 - value * value), ),
    )

def gaussianNoise(x, std, training, seed=0):
    """
    Add N(0, std^2) noise when training, pass through otherwise.
    The gradient is the identity in both cases.

    seed (int or sequence of ints)
        Noise stream key, typically (seed, step).
    """
    if std < 0:
        raise ConfigError('std must be non-negative, got %r' % (std, ), field='std')
    if not training or std == 0:
        return x
    if isinstance(seed, int):
        seed = (seed, )
    noise = getRandomGenerator(*seed).standard_normal(x.shape) * std
    return _makeResult(
        x.value + noise.astype(x.dtype),
        (x, ),
        lambda grad: (grad, ),
    )

def _checkSameShape(a, b, name):
    if a.shape != b.shape:
        raise ShapeError('%s: shape %r vs %r' % (name, a.shape, b.shape), field='shape')

def reduceL1(a, b, weight=None):
    """
    mean(|a - b| * weight), weight being a constant array (default: 1).
    """
    b = asTensor(b, a.dtype)
    _checkSameShape(a, b, 'reduceL1')
    difference = a.value - b.value
    if weight is None:
        weight = 1
    else:
        weight = numpy.asarray(weight, dtype=a.dtype)
        if weight.shape != a.shape:
            raise ShapeError(
                'reduceL1: weight shape %r vs %r' % (weight.shape, a.shape),
                field='weight',
            )
    count = difference.size
    value = numpy.mean(numpy.abs(difference) * weight)

    def backwardL1(grad):
        grad_a = numpy.sign(difference) * weight * (grad / count)
        return grad_a, -grad_a

    return _makeResult(value, (a, b), backwardL1)

def reduceMSE(a, b):
    """
    mean((a - b)^2).
    """
    b = asTensor(b, a.dtype)
    _checkSameShape(a, b, 'reduceMSE')
    difference = a.value - b.value
    count = difference.size

    def backwardMSE(grad):
        grad_a = difference * (2 * grad / count)
        return grad_a, -grad_a

    return _makeResult(numpy.mean(difference * difference), (a, b), backwardMSE)

def weightedSum(term_list):
    """
    Sum of coefficient * scalar Tensor over (coefficient, Tensor) pairs.
    """
    result = None
    for coefficient, term in term_list:
        term = term * coefficient
        result = term if result is None else result + term
    return result

def _iterTopological(root):
    """
    Nodes reachable from root, each once, parents before children.
    """
    visited = set()
    order = []
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parent_list: # pylint: disable=protected-access
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order

def backward(loss):
    """
    Accumulate d(loss)/d(leaf) into the grad attribute of every leaf tensor
    with requires_grad set, loss being a single-value Tensor.
    """
    if loss.value.size != 1:
        raise ShapeError(
            'backward needs a scalar loss, got shape %r' % (loss.shape, ),
            field='loss',
        )
    if not loss.requires_grad:
        return
    grad_dict = {id(loss): numpy.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(_iterTopological(loss)):
        grad = grad_dict.pop(id(node), None)
        if grad is None:
            continue
        if node.isLeaf():
            if node.grad is None:
                node.grad = numpy.zeros(node.shape, dtype=node.dtype)
            node.grad += grad
            continue
        # pylint: disable=protected-access
        for parent, parent_grad in zip(node._parent_list, node._backward(grad)):
        # pylint: enable=protected-access
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = numpy.broadcast_to(parent_grad, parent.shape)
            key = id(parent)
            if key in grad_dict:
                grad_dict[key] = grad_dict[key] + parent_grad
            else:
                grad_dict[key] = parent_grad

def gradCheck(closure, input_list, eps=1e-6, sample=None, seed=0):
    """
    Compare backward() gradients with central finite differences.

    closure (callable)
        Maps the input Tensors to a scalar Tensor.
    input_list (list of Tensor)
        Checked inputs; they should be float64 and have requires_grad set.
    eps (float)
        Finite-difference step.
    sample (int, None)
        If given, check only this many randomly chosen coordinates per input.

    Returns the maximum over checked coordinates of
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    for tensor in input_list:
        # Perturbations below go through a flat view.
        tensor.value = numpy.ascontiguousarray(tensor.value)
        tensor.zeroGrad()
    backward(closure(*input_list))
    rng = getRandomGenerator(seed)
    worst = 0.0
    for tensor in input_list:
        analytic = tensor.grad
        if analytic is None:
            analytic = numpy.zeros(tensor.shape, dtype=tensor.dtype)
        flat = tensor.value.reshape(-1)
        index_list = range(flat.size)
        if sample is not None and sample < flat.size:
            index_list = rng.choice(flat.size, size=sample, replace=False)
        for index in index_list:
            original = flat[index]
            with noGrad():
                flat[index] = original + eps
                plus = closure(*input_list).item()
                flat[index] = original - eps
                minus = closure(*input_list).item()
            flat[index] = original
            numeric = (plus - minus) / (2 * eps)
            exact = analytic.reshape(-1)[index]
            worst = max(
                worst,
                abs(exact - numeric) / max(1e-8, abs(exact) + abs(numeric)),
            )
    return worst

OP_TOLERANCE = 1e-4

def _awayFromZero(rng, shape, margin=0.1):
    value = rng.standard_normal(shape)
    return numpy.where(value < 0, value - margin, value + margin)

def iterGradCheckSuite(seed=0):
    """
    Yield (name, closure, input_list) for every differentiable operation,
    in double precision, with inputs kept away from ReLU and max-pool kinks.
    """
    rng = getRandomGenerator(seed)

    def parameter(value):
        return Tensor(numpy.array(value, dtype=numpy.float64), requires_grad=True)

    for dilation in (1, 2):
        yield (
            'conv2d+relu+mean (dilation %i)' % (dilation, ),
            lambda x, w, b, dilation=dilation: relu(conv2d(x, w, b, dilation)).mean(),
            [
                parameter(rng.standard_normal((1, 2, 6, 6))),
                parameter(rng.standard_normal((3, 2, 3, 3))),
                parameter(rng.standard_normal(3)),
            ],
        )
    # Distinct values: no ties within a window.
    yield (
        'maxpool2',
        _weightedSumClosure(maxpool2, rng.standard_normal((1, 2, 2, 2))),
        [parameter(rng.permutation(32).reshape(1, 2, 4, 4) / 10.)],
    )
    yield (
        'upsampleNearest2',
        _weightedSumClosure(upsampleNearest2, rng.standard_normal((1, 2, 6, 6))),
        [parameter(rng.standard_normal((1, 2, 3, 3)))],
    )
    concat_weight = rng.standard_normal((1, 5, 3, 3))
    yield (
        'concatChannels',
        lambda a, b: (concatChannels(a, b) * Tensor(concat_weight)).sum(),
        [
            parameter(rng.standard_normal((1, 2, 3, 3))),
            parameter(rng.standard_normal((1, 3, 3, 3))),
        ],
    )
    affine_weight = rng.standard_normal((2, 3, 4, 4))
    yield (
        'repeatChannels+channelAffine',
        lambda x: (channelAffine(
            repeatChannels(x, 3),
            (0.1, -0.2, 0.3),
            (2.0, 0.5, -1.0),
        ) * Tensor(affine_weight)).sum(),
        [parameter(rng.standard_normal((2, 1, 4, 4)))],
    )
    yield (
        'relu',
        _weightedSumClosure(relu, rng.standard_normal((1, 2, 4, 4))),
        [parameter(_awayFromZero(rng, (1, 2, 4, 4)))],
    )
    yield (
        'tanh',
        lambda x: tanh(tanh(x) * 1.5).mean(),
        [parameter(rng.standard_normal((1, 2, 4, 4)))],
    )
    yield (
        'gaussianNoise',
        lambda x: (gaussianNoise(x, 0.2, True, seed) * x).mean(),
        [parameter(rng.standard_normal((1, 1, 4, 4)))],
    )
    l1_weight = 1 + 30 * (rng.random((1, 1, 4, 4)) < 0.3)
    l1_target = rng.standard_normal((1, 1, 4, 4))
    yield (
        'reduceL1 (weighted)',
        lambda x: reduceL1(x, l1_target, l1_weight),
        [parameter(l1_target + _awayFromZero(rng, (1, 1, 4, 4)))],
    )
    yield (
        'reduceMSE',
        reduceMSE,
        [
            parameter(rng.standard_normal((1, 2, 4, 4))),
            parameter(rng.standard_normal((1, 2, 4, 4))),
        ],
    )

def _weightedSumClosure(operation, weight):
    return lambda x: (operation(x) * Tensor(weight)).sum()

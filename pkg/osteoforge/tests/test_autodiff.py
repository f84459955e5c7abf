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
import numpy
from osteoforge.autodiff import (
    OP_TOLERANCE,
    Tensor,
    backward,
    concatChannels,
    conv2d,
    gaussianNoise,
    gradCheck,
    iterGradCheckSuite,
    maxpool2,
    noGrad,
    reduceL1,
    relu,
    tanh,
    upsampleNearest2,
    weightedSum,
)
from osteoforge.common import ConfigError, ShapeError
from .common import main, naiveConv2d

def testGradCheckSuite():
    for seed in (0, 1):
        for name, closure, input_list in iterGradCheckSuite(seed):
            error = gradCheck(closure, input_list)
            assert error < OP_TOLERANCE, (seed, name, error)

def testConv2dOracle():
    rng = numpy.random.default_rng(0)
    for index in range(200):
        batch, in_channels, out_channels = rng.integers(1, 4, size=3).tolist()
        height, width = rng.integers(1, 9, size=2).tolist()
        kernel_size = int(rng.choice((1, 3, 5)))
        # Every dilation is seen with a 3x3 kernel.
        dilation = index % 3 + 1 if kernel_size == 3 else int(rng.integers(1, 3))
        x = rng.standard_normal((batch, in_channels, height, width))
        weight = rng.standard_normal((out_channels, in_channels, kernel_size, kernel_size))
        bias = rng.standard_normal(out_channels)
        result = conv2d(Tensor(x), Tensor(weight), Tensor(bias), dilation)
        assert result.shape == (batch, out_channels, height, width)
        expected = naiveConv2d(x, weight, bias, dilation)
        assert numpy.abs(result.value - expected).max() <= 1e-12 * max(
            1,
            numpy.abs(expected).max(),
        ), (index, x.shape, weight.shape, dilation)
    x = rng.standard_normal((1, 4, 6, 6))
    weight = rng.standard_normal((2, 4, 1, 1))
    bias = numpy.zeros(2)
    assert numpy.abs(
        conv2d(Tensor(x), Tensor(weight), Tensor(bias)).value -
        naiveConv2d(x, weight, bias)
    ).max() < 1e-12

def testConv2dIdentityKernel():
    rng = numpy.random.default_rng(1)
    x = rng.standard_normal((1, 1, 7, 7))
    weight = numpy.zeros((1, 1, 3, 3))
    weight[0, 0, 1, 1] = 1
    assert (conv2d(Tensor(x), Tensor(weight), Tensor(numpy.zeros(1))).value == x).all()

def testConv2dShapeErrors():
    x = Tensor(numpy.zeros((1, 2, 4, 4)))
    for weight, bias, field in (
        (numpy.zeros((1, 3, 3, 3)), numpy.zeros(1), 'channels'),
        (numpy.zeros((1, 2, 2, 2)), numpy.zeros(1), 'kernel'),
        (numpy.zeros((1, 2, 3, 3)), numpy.zeros(2), 'bias'),
    ):
        try:
            conv2d(x, Tensor(weight), Tensor(bias))
        except ShapeError as exc:
            assert exc.field == field, (field, exc.field)
        else:
            raise AssertionError('%s mismatch accepted' % (field, ))

def testMaxpool():
    x = Tensor(numpy.array([[[[1., 2.], [3., 4.]]]]), requires_grad=True)
    result = maxpool2(x)
    assert result.value.tolist() == [[[[4.]]]]
    backward(result.sum())
    assert x.grad.tolist() == [[[[0, 0], [0, 1]]]]

def testMaxpoolTies():
    x = Tensor(numpy.full((1, 1, 4, 4), 2.), requires_grad=True)
    backward(maxpool2(x).sum())
    expected = numpy.zeros((4, 4))
    expected[::2, ::2] = 1
    assert (x.grad[0, 0] == expected).all()

def testMaxpoolOddSize():
    try:
        maxpool2(Tensor(numpy.zeros((1, 1, 3, 4))))
    except ShapeError:
        pass
    else:
        raise AssertionError('odd height accepted')

def testUpsample():
    x = Tensor(numpy.arange(4.).reshape(1, 1, 2, 2), requires_grad=True)
    result = upsampleNearest2(x)
    assert result.value[0, 0].tolist() == [
        [0, 0, 1, 1],
        [0, 0, 1, 1],
        [2, 2, 3, 3],
        [2, 2, 3, 3],
    ]
    backward(result.sum())
    assert (x.grad == 4).all()

def testSquareMean():
    x = Tensor(numpy.array([3.]), requires_grad=True)
    backward((x * x).mean())
    assert x.grad.tolist() == [6.]

def testSharedNode():
    x = Tensor(numpy.array([2., -1.]), requires_grad=True)
    y = x * x
    backward((y + y * x + x).sum())
    # d/dx (x^2 + x^3 + x) = 2x + 3x^2 + 1
    assert x.grad.tolist() == [17., 2.]

def testGradientAccumulates():
    x = Tensor(numpy.ones(3), requires_grad=True)
    backward(x.sum())
    backward((x * 2).sum())
    assert x.grad.tolist() == [3., 3., 3.]
    x.zeroGrad()
    assert x.grad is None

def testReluKink():
    x = Tensor(numpy.array([-1., 0., 2.]), requires_grad=True)
    backward(relu(x).sum())
    assert x.grad.tolist() == [0., 0., 1.]

def testConcatChannels():
    a = Tensor(numpy.zeros((1, 1, 2, 2)), requires_grad=True)
    b = Tensor(numpy.ones((1, 2, 2, 2)), requires_grad=True)
    result = concatChannels(a, b)
    assert result.shape == (1, 3, 2, 2)
    backward((result * Tensor(numpy.arange(12.).reshape(1, 3, 2, 2))).sum())
    assert a.grad.ravel().tolist() == [0., 1., 2., 3.]
    assert b.grad.ravel().tolist() == [4., 5., 6., 7., 8., 9., 10., 11.]

def testGaussianNoise():
    x = Tensor(numpy.zeros((1, 1, 256, 256)))
    assert gaussianNoise(x, 0.2, False) is x
    assert gaussianNoise(x, 0, True) is x
    noisy = gaussianNoise(x, 0.2, True, (7, 3)).value
    assert abs(noisy.mean()) < 0.01
    assert abs(noisy.std() - 0.2) < 0.01
    assert (gaussianNoise(x, 0.2, True, (7, 3)).value == noisy).all()
    assert not (gaussianNoise(x, 0.2, True, (7, 4)).value == noisy).all()
    try:
        gaussianNoise(x, -0.1, True)
    except ConfigError as exc:
        assert exc.field == 'std'
    else:
        raise AssertionError('negative std accepted')

def testTanhOpenRange():
    for dtype in (numpy.float32, numpy.float64):
        x = Tensor(
            numpy.array([-50., -10., 0., 10., 50.], dtype=dtype),
            requires_grad=True,
        )
        result = tanh(x)
        assert result.dtype == dtype
        assert (numpy.abs(result.value) < 1).all(), result.value
        assert result.value[2] == 0
        backward(result.sum())
        assert (x.grad > 0).all(), x.grad
    assert tanh(Tensor(numpy.array([0.5]))).item() == numpy.tanh(0.5)

def testWeightedL1():
    a = Tensor(numpy.array([[1., 2.], [3., 4.]]), requires_grad=True)
    b = numpy.zeros((2, 2))
    weight = numpy.array([[1., 1.], [1., 31.]])
    loss = reduceL1(a, b, weight)
    assert loss.item() == (1 + 2 + 3 + 4 * 31) / 4
    backward(loss)
    assert a.grad.tolist() == [[0.25, 0.25], [0.25, 7.75]]

def testWeightedSum():
    a = Tensor(numpy.array(2.), requires_grad=True)
    b = Tensor(numpy.array(5.), requires_grad=True)
    total = weightedSum([(0.5, a), (2, b)])
    assert total.item() == 11
    backward(total)
    assert (a.grad, b.grad) == (0.5, 2)

def testNoGrad():
    x = Tensor(numpy.ones(3), requires_grad=True)
    with noGrad():
        y = (x * 2).sum()
    assert not y.requires_grad
    assert y.isLeaf()
    assert (x * 2).sum().requires_grad

def testBackwardNeedsScalar():
    x = Tensor(numpy.ones(3), requires_grad=True)
    try:
        backward(x * 2)
    except ShapeError as exc:
        assert exc.field == 'loss'
    else:
        raise AssertionError('non-scalar loss accepted')

if __name__ == '__main__':
    main(globals())

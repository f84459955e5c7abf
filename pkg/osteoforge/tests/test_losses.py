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
import os
import tempfile
import numpy
from osteoforge.autodiff import OP_TOLERANCE, Tensor, backward, gradCheck
from osteoforge.common import ConfigError, RangeError, ShapeError
from osteoforge.image import RadiographImage
from osteoforge.losses import (
    LossNetwork,
    l1Loss,
    loadLossNetwork,
    mixedLoss,
    perceptualLoss,
    saveLossNetwork,
    triplicate,
    weightedL1Loss,
)
from .common import main, naiveLossFeatures

SMALL_WIDTHS = (4, 6)

def _randomBatch(rng, shape=(2, 1, 8, 8)):
    return rng.uniform(-1, 1, shape)

def _randomMask(rng, shape=(2, 1, 8, 8)):
    return (rng.random(shape) < 0.2).astype(numpy.float64)

def testL1():
    rng = numpy.random.default_rng(0)
    a = _randomBatch(rng)
    b = _randomBatch(rng)
    assert l1Loss(a, a).item() == 0
    assert l1Loss(numpy.zeros((1, 1, 4, 4)), numpy.full((1, 1, 4, 4), 0.5)).item() == 0.5
    assert l1Loss(a, b).item() == l1Loss(b, a).item()
    try:
        l1Loss(a, b[:, :, :4])
    except ShapeError:
        pass
    else:
        raise AssertionError('shape mismatch accepted')

def testWeightedL1():
    rng = numpy.random.default_rng(1)
    a = _randomBatch(rng)
    b = _randomBatch(rng)
    plain = l1Loss(a, b).item()
    assert weightedL1Loss(a, b, numpy.zeros(a.shape)).item() == plain
    assert numpy.isclose(weightedL1Loss(a, b, numpy.ones(a.shape)).item(), 31 * plain)
    mask = _randomMask(rng)
    assert weightedL1Loss(a, b, mask, {'nodule_weight': 0}).item() == plain
    value_list = [
        weightedL1Loss(a, b, mask, {'nodule_weight': x}).item()
        for x in (0, 1, 10, 30, 100)
    ]
    assert value_list == sorted(value_list) and value_list[0] < value_list[-1]

def testWeightedL1MaskImage():
    rng = numpy.random.default_rng(2)
    a = _randomBatch(rng, (3, 1, 8, 8))
    b = _randomBatch(rng, (3, 1, 8, 8))
    pixels = _randomMask(rng, (8, 8))
    image_loss = weightedL1Loss(a, b, RadiographImage(pixels, 'binary')).item()
    array_loss = weightedL1Loss(a, b, numpy.broadcast_to(pixels, a.shape)).item()
    assert image_loss == array_loss

def testWeightedL1NonBinaryMask():
    a = numpy.zeros((1, 1, 2, 2))
    try:
        weightedL1Loss(a, a, numpy.full((1, 1, 2, 2), 0.5))
    except RangeError as exc:
        assert exc.field == 'nodule_mask'
    else:
        raise AssertionError('non-binary mask accepted')

def testTriplicate():
    rng = numpy.random.default_rng(3)
    x = Tensor(_randomBatch(rng), requires_grad=True)
    result = triplicate(x)
    assert result.shape == (2, 3, 8, 8)
    for channel in range(3):
        assert (result.value[:, channel] == x.value[:, 0]).all()
    shifted = triplicate(x, (1, 2, 3), (2, 2, 2)).value
    assert (shifted[:, 2] == (x.value[:, 0] + 3) * 2).all()
    weight = rng.standard_normal((2, 3, 8, 8))
    backward((result * Tensor(weight)).sum())
    assert numpy.allclose(x.grad, weight.sum(axis=1, keepdims=True), rtol=0, atol=1e-12)
    try:
        triplicate(numpy.zeros((1, 2, 4, 4)))
    except ShapeError as exc:
        assert exc.field == 'channels'
    else:
        raise AssertionError('two-channel batch accepted')

def testLossNetwork():
    loss_net = LossNetwork.random(0)
    assert loss_net.widths == (64, 128)
    features = loss_net.features(triplicate(numpy.zeros((1, 1, 8, 6))))
    assert features.shape == (1, 128, 4, 3)
    for _, tensor in loss_net.iterParameters():
        assert not tensor.requires_grad

def testPerceptualOracle():
    rng = numpy.random.default_rng(4)
    loss_net = LossNetwork.random(5, SMALL_WIDTHS)
    for _ in range(3):
        a = _randomBatch(rng)
        b = _randomBatch(rng)
        expected = numpy.mean((
            naiveLossFeatures(numpy.repeat(a, 3, axis=1), loss_net) -
            naiveLossFeatures(numpy.repeat(b, 3, axis=1), loss_net)
        ) ** 2)
        value = perceptualLoss(a, b, loss_net).item()
        assert abs(value - expected) < 1e-10, (value, expected)
        assert value >= 0
        assert perceptualLoss(a, a, loss_net).item() == 0

def testPerceptualGradient():
    rng = numpy.random.default_rng(6)
    loss_net = LossNetwork.random(7, SMALL_WIDTHS)
    target = _randomBatch(rng, (1, 1, 4, 4))
    pred = Tensor(_randomBatch(rng, (1, 1, 4, 4)), requires_grad=True)
    error = gradCheck(lambda x: perceptualLoss(x, target, loss_net), [pred])
    assert error < OP_TOLERANCE, error
    snapshot = [x.value.copy() for _, x in loss_net.iterParameters()]
    backward(perceptualLoss(pred, target, loss_net))
    for (_, tensor), value in zip(loss_net.iterParameters(), snapshot):
        assert tensor.grad is None
        assert (tensor.value == value).all()

def testMixedLoss():
    rng = numpy.random.default_rng(8)
    loss_net = LossNetwork.random(0, SMALL_WIDTHS)
    a = _randomBatch(rng)
    b = _randomBatch(rng)
    mask = _randomMask(rng)
    assert mixedLoss(a, b, mask, {'l1': 1}).item() == l1Loss(a, b).item()
    assert mixedLoss(a, b, mask, {'weighted_l1': 1}, 5).item() == weightedL1Loss(
        a, b, mask, {'nodule_weight': 5},
    ).item()
    mixed = mixedLoss(a, b, mask, {'l1': 1, 'perceptual': 0.5}, loss_net=loss_net).item()
    assert numpy.isclose(
        mixed,
        l1Loss(a, b).item() + 0.5 * perceptualLoss(a, b, loss_net).item(),
    )
    for loss_mix, field in (
        ({}, 'loss_mix'),
        ({'l2': 1}, 'loss_mix'),
        ({'l1': -1}, 'loss_mix'),
        ({'perceptual': 1}, 'loss_network'),
    ):
        try:
            mixedLoss(a, b, mask, loss_mix)
        except ConfigError as exc:
            assert exc.field == field, (loss_mix, exc.field)
        else:
            raise AssertionError('%r accepted' % (loss_mix, ))

def testLossNetworkSaveLoad():
    loss_net = LossNetwork.random(9, SMALL_WIDTHS)
    loss_net.input_offset = (0.1, 0.2, 0.3)
    loss_net.input_scale = (1.0, 2.0, 0.5)
    rng = numpy.random.default_rng(10)
    a = _randomBatch(rng)
    b = _randomBatch(rng)
    with tempfile.TemporaryDirectory() as directory:
        path = saveLossNetwork(loss_net, os.path.join(directory, 'vgg'))
        loaded = loadLossNetwork(path)
    assert loaded.widths == SMALL_WIDTHS
    assert loaded.input_offset == loss_net.input_offset
    assert loaded.input_scale == loss_net.input_scale
    assert perceptualLoss(a, b, loaded).item() == perceptualLoss(a, b, loss_net).item()

if __name__ == '__main__':
    main(globals())

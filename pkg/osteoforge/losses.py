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
Reconstruction losses: L1, nodule-weighted L1 and feature reconstruction
through a fixed convolutional loss network.

All losses use mean reduction. The perceptual loss is the mean squared
difference of loss-network features.
"""
import numpy
from .autodiff import (
    asTensor,
    channelAffine,
    maxpool2,
    noGrad,
    reduceL1,
    reduceMSE,
    relu,
    repeatChannels,
    weightedSum,
)
from .common import (
    Config,
    ConfigError,
    RangeError,
    ShapeError,
    checkPositive,
    getRandomGenerator,
)
# pylint: disable=no-name-in-module
from .common import (
    LOSS,
    LOSS_L1,
    LOSS_WEIGHTED_L1,
    LOSS_PERCEPTUAL,
)
# pylint: enable=no-name-in-module
from .unet import ConvLayer
from .weights import loadWeightFile, saveWeightFile

__all__ = (
    'WeightedL1Config',
    'LossNetwork',
    'l1Loss',
    'weightedL1Loss',
    'triplicate',
    'perceptualLoss',
    'mixedLoss',
    'saveLossNetwork',
    'loadLossNetwork',
)

# (name, input width index, output width index); width index 0 is the RGB
# input, 1 and 2 the block widths.
_LOSS_LAYER_LIST = (
    ('block1_conv1', 0, 1),
    ('block1_conv2', 1, 1),
    ('block2_conv1', 1, 2),
    ('block2_conv2', 2, 2),
)
LOSS_NETWORK_WIDTHS = (64, 128)

class WeightedL1Config(Config):
    """
    nodule_weight (float)
        Extra weight of pixels inside the projected nodule mask.
    """
    _field_list = (
        ('nodule_weight', 30.0),
    )

    def validate(self):
        checkPositive(self, 'nodule_weight', strict=False)

class LossNetwork:
    """
    Fixed feature extractor: two blocks of two 3x3 conv + ReLU, with 2x2
    max pooling between them. Features are the last ReLU output, of shape
    N x widths[1] x H/2 x W/2 for an N x 3 x H x W input.

    input_offset, input_scale (3 floats)
        Per-channel (x + offset) * scale applied by triplicate().
    """
    def __init__(self, layer_dict, input_offset=(0., 0., 0.), input_scale=(1., 1., 1.)):
        self.layer_dict = layer_dict
        self.input_offset = tuple(float(x) for x in input_offset)
        self.input_scale = tuple(float(x) for x in input_scale)
        if len(self.input_offset) != 3 or len(self.input_scale) != 3:
            raise ShapeError(
                'input offset and scale need one value per channel',
                field='input_offset',
            )

    @classmethod
    def random(cls, seed=0, widths=LOSS_NETWORK_WIDTHS, dtype='float64'):
        """
        He-initialized network, drawn in layer order from seed.
        """
        rng = getRandomGenerator(seed)
        width_list = (3, ) + tuple(widths)
        return cls({
            name: ConvLayer.heNormal(
                name,
                rng,
                width_list[in_index],
                width_list[out_index],
                3,
                dtype=dtype,
                trainable=False,
            )
            for name, in_index, out_index in _LOSS_LAYER_LIST
        })

    @property
    def widths(self):
        return (
            self.layer_dict['block1_conv2'].weight.shape[0],
            self.layer_dict['block2_conv2'].weight.shape[0],
        )

    def iterParameters(self):
        for layer in self.layer_dict.values():
            yield from layer.iterParameters()

    def features(self, x):
        """
        x (Tensor, N x 3 x H x W), H and W even.
        """
        x = relu(self.layer_dict['block1_conv1'](x))
        x = relu(self.layer_dict['block1_conv2'](x))
        x = maxpool2(x)
        x = relu(self.layer_dict['block2_conv1'](x))
        return relu(self.layer_dict['block2_conv2'](x))

def _checkShapes(pred, target, name):
    if pred.shape != target.shape:
        raise ShapeError(
            '%s: prediction %r vs target %r' % (name, pred.shape, target.shape),
            field='shape',
        )

def l1Loss(pred, target):
    """
    mean |pred - target|.
    """
    pred = asTensor(pred)
    target = asTensor(target, pred.dtype)
    _checkShapes(pred, target, 'l1Loss')
    return reduceL1(pred, target)

def _getMaskArray(nodule_mask):
    mask = numpy.asarray(getattr(nodule_mask, 'pixels', nodule_mask), dtype=numpy.float64)
    if not numpy.all((mask == 0) | (mask == 1)):
        raise RangeError('nodule mask must be binary', field='nodule_mask')
    return mask

def weightedL1Loss(pred, target, nodule_mask, cfg=None):
    """
    mean |pred - target| * (1 + nodule_weight * mask).

    nodule_mask (array or RadiographImage)
        Binary, broadcastable to pred's shape: N x 1 x H x W, or H x W.
    """
    cfg = WeightedL1Config.fromDict(cfg)
    pred = asTensor(pred)
    target = asTensor(target, pred.dtype)
    _checkShapes(pred, target, 'weightedL1Loss')
    mask = _getMaskArray(nodule_mask)
    try:
        weight = numpy.broadcast_to(1 + cfg.nodule_weight * mask, pred.shape)
    except ValueError:
        raise ShapeError(
            'weightedL1Loss: mask %r vs prediction %r' % (mask.shape, pred.shape),
            field='nodule_mask',
        ) from None
    return reduceL1(pred, target, weight)

def triplicate(batch, input_offset=(0., 0., 0.), input_scale=(1., 1., 1.)):
    """
    Turn an N x 1 x H x W batch into N x 3 x H x W by channel repetition,
    then apply the per-channel (x + offset) * scale.
    """
    batch = asTensor(batch)
    if batch.value.ndim != 4 or batch.shape[1] != 1:
        raise ShapeError(
            'triplicate expects an N x 1 x H x W batch, got %r' % (batch.shape, ),
            field='channels',
        )
    return channelAffine(repeatChannels(batch, 3), input_offset, input_scale)

def perceptualLoss(pred, target, loss_net):
    """
    Mean squared difference between loss-network features of triplicated
    pred and target. Only pred receives gradients.
    """
    pred = asTensor(pred)
    target = asTensor(target, pred.dtype)
    _checkShapes(pred, target, 'perceptualLoss')
    with noGrad():
        target_features = loss_net.features(triplicate(
            target,
            loss_net.input_offset,
            loss_net.input_scale,
        ))
    return reduceMSE(
        loss_net.features(triplicate(
            pred,
            loss_net.input_offset,
            loss_net.input_scale,
        )),
        target_features,
    )

def checkLossMix(loss_mix, field='loss_mix'):
    """
    Raise ConfigError unless loss_mix is a non-empty {selector: coefficient}
    dict with known selectors and non-negative coefficients.
    """
    if not isinstance(loss_mix, dict) or not loss_mix:
        raise ConfigError('%s must be a non-empty dict' % (field, ), field=field)
    for selector, coefficient in loss_mix.items():
        if selector not in LOSS:
            raise ConfigError(
                '%s: unknown loss %r, expected one of %r' % (
                    field,
                    selector,
                    LOSS.values(),
                ),
                field=field,
            )
        if coefficient < 0:
            raise ConfigError(
                '%s: negative coefficient for %r' % (field, selector),
                field=field,
            )

def mixedLoss(pred, target, nodule_mask, loss_mix, nodule_weight=30.0, loss_net=None):
    """
    Sum of coefficient * loss over loss_mix, a {selector: coefficient} dict.
    A single selector with coefficient 1 computes that loss alone.
    """
    checkLossMix(loss_mix)
    term_list = []
    for selector, coefficient in loss_mix.items():
        if selector == LOSS_L1:
            term = l1Loss(pred, target)
        elif selector == LOSS_WEIGHTED_L1:
            term = weightedL1Loss(
                pred,
                target,
                nodule_mask,
                {'nodule_weight': nodule_weight},
            )
        else:
            assert selector == LOSS_PERCEPTUAL, selector
            if loss_net is None:
                raise ConfigError(
                    'perceptual loss needs a loss network',
                    field='loss_network',
                )
            term = perceptualLoss(pred, target, loss_net)
        if coefficient == 1 and len(loss_mix) == 1:
            return term
        term_list.append((coefficient, term))
    return weightedSum(term_list)

def saveLossNetwork(loss_net, path):
    """
    Store loss-network weights and input offset/scale.
    Returns the manifest path.
    """
    return saveWeightFile(
        path,
        [(name, tensor.value) for name, tensor in loss_net.iterParameters()],
        {
            'input_offset': list(loss_net.input_offset),
            'input_scale': list(loss_net.input_scale),
        },
    )

def loadLossNetwork(path):
    """
    Load a loss network. Widths follow the stored kernel shapes; the
    manifest may omit input_offset (zeros) and input_scale (ones).
    """
    named_array_list, manifest = loadWeightFile(path)
    array_dict = dict(named_array_list)
    try:
        first_weight = array_dict['block1_conv1.weight']
        last_weight = array_dict['block2_conv2.weight']
    except KeyError as exc:
        raise ShapeError(
            'Tensor %s missing from %r' % (exc, path),
            field=exc.args[0],
        ) from None
    width_list = (3, first_weight.shape[0], last_weight.shape[0])
    layer_dict = {}
    for name, in_index, out_index in _LOSS_LAYER_LIST:
        shape_dict = {
            name + '.weight': (width_list[out_index], width_list[in_index], 3, 3),
            name + '.bias': (width_list[out_index], ),
        }
        for tensor_name, shape in shape_dict.items():
            if tensor_name not in array_dict:
                raise ShapeError(
                    'Tensor %r missing from %r' % (tensor_name, path),
                    field=tensor_name,
                )
            if array_dict[tensor_name].shape != shape:
                raise ShapeError(
                    'Tensor %r: expected shape %r, found %r' % (
                        tensor_name,
                        shape,
                        array_dict[tensor_name].shape,
                    ),
                    field=tensor_name,
                )
        layer_dict[name] = ConvLayer(
            name,
            array_dict[name + '.weight'],
            array_dict[name + '.bias'],
            trainable=False,
        )
    extra_list = sorted(set(array_dict).difference(
        x.name
        for layer in layer_dict.values()
        for x in (layer.weight, layer.bias)
    ))
    if extra_list:
        raise ShapeError(
            'Unexpected tensor %r in %r' % (extra_list[0], path),
            field=extra_list[0],
        )
    return LossNetwork(
        layer_dict,
        manifest.get('input_offset', (0., 0., 0.)),
        manifest.get('input_scale', (1., 1., 1.)),
    )

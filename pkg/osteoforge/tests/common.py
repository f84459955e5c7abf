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
Shared test helpers: a minimal runner, brute-force reference
implementations and a small trained toy model.
"""
import functools
import math
import sys
import traceback
import numpy
from osteoforge.imageops import AugmentConfig
from osteoforge.losses import LossNetwork
from osteoforge.projector import makePair
from osteoforge.trainer import train
from osteoforge.unet import UNetConfig, build
from osteoforge.volume import generatePhantom

# (first seed, count) of default-spec phantoms, imaged at 64x64.
PHANTOM_TRAIN_SET = (100, 16)
PHANTOM_TEST_SET = (200, 32)
# 64x64 images fit at most 3 MS-SSIM scales.
TOY_METRICS = {'scales': 3}

def runTests(namespace):
    """
    Call every test* function of namespace (a module's globals()), in name
    order. Returns a process exit status.
    """
    failed = 0
    name_list = sorted(
        name for name, value in namespace.items()
        if name.startswith('test') and callable(value)
    )
    for name in name_list:
        try:
            namespace[name]()
        except Exception: # pylint: disable=broad-except
            failed += 1
            print('FAIL', name)
            traceback.print_exc()
        else:
            print('ok  ', name)
    print('%i/%i passed' % (len(name_list) - failed, len(name_list)))
    return 1 if failed else 0

def main(namespace):
    sys.exit(runTests(namespace))

def naiveAttenuation(data, mu_water=0.2, clamp_air=True):
    """
    Triple-loop average attenuation of a (Z, Y, X) HU array.
    """
    z_size, y_size, x_size = data.shape
    result = numpy.zeros((z_size, x_size))
    for z in range(z_size):
        for x in range(x_size):
            total = 0.
            for y in range(y_size):
                shifted = float(data[z, y, x]) + 1000
                if clamp_air:
                    shifted = max(0., shifted)
                total += mu_water * shifted / (y_size * 1000)
            result[z, x] = total
    return result

def naiveMask(dims, annotation_list):
    """
    Voxel scan: pixel (z, x) is set if any integer y puts (x, y, z) inside
    an annotated ellipsoid.
    """
    x_size, y_size, z_size = dims
    result = numpy.zeros((z_size, x_size))
    for annotation in annotation_list:
        (cx, cy, cz), (rx, ry, rz) = annotation.center_vox, annotation.radii_vox
        for z in range(z_size):
            for x in range(x_size):
                for y in range(y_size):
                    if (
                        ((x - cx) / rx) ** 2 +
                        ((y - cy) / ry) ** 2 +
                        ((z - cz) / rz) ** 2
                    ) <= 1:
                        result[z, x] = 1
                        break
    return result

def naiveConv2d(x, weight, bias, dilation=1):
    """
    Same-padded cross-correlation by explicit loops over output positions.
    """
    batch, in_channels, height, width = x.shape
    out_channels, _, kernel_size, _ = weight.shape
    pad = dilation * (kernel_size - 1) // 2
    padded = numpy.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    result = numpy.zeros((batch, out_channels, height, width))
    span = dilation * (kernel_size - 1) + 1
    for row in range(height):
        for col in range(width):
            window = padded[
                :,
                :,
                row:row + span:dilation,
                col:col + span:dilation,
            ]
            result[:, :, row, col] = numpy.einsum(
                'nckl,ockl->no',
                window,
                weight,
            ) + bias
    return result

def naiveLossFeatures(x, loss_net):
    """
    Loss network features of an N x 3 x H x W array, with naiveConv2d.
    """
    def layer(value, name):
        conv = loss_net.layer_dict[name]
        return numpy.maximum(naiveConv2d(value, conv.weight.value, conv.bias.value), 0)
    x = layer(layer(x, 'block1_conv1'), 'block1_conv2')
    batch, channels, height, width = x.shape
    x = x.reshape(batch, channels, height // 2, 2, width // 2, 2).max(axis=(3, 5))
    return layer(layer(x, 'block2_conv1'), 'block2_conv2')

def naiveSSIM(a, b, dynamic_range=255., k1=0.01, k2=0.03, size=11, sigma=1.5):
    """
    Mean SSIM over every position where the Gaussian window fits.
    """
    a = numpy.asarray(a, dtype=numpy.float64) * dynamic_range
    b = numpy.asarray(b, dtype=numpy.float64) * dynamic_range
    offset = numpy.arange(size) - (size - 1) / 2
    window = numpy.exp(-(offset[:, None] ** 2 + offset[None, :] ** 2) / (2 * sigma ** 2))
    window /= window.sum()
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    value_list = []
    for row in range(a.shape[0] - size + 1):
        for col in range(a.shape[1] - size + 1):
            patch_a = a[row:row + size, col:col + size]
            patch_b = b[row:row + size, col:col + size]
            mu_a = (window * patch_a).sum()
            mu_b = (window * patch_b).sum()
            var_a = (window * (patch_a - mu_a) ** 2).sum()
            var_b = (window * (patch_b - mu_b) ** 2).sum()
            covariance = (window * (patch_a - mu_a) * (patch_b - mu_b)).sum()
            value_list.append(
                (2 * mu_a * mu_b + c1) * (2 * covariance + c2) /
                ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
            )
    return float(numpy.mean(value_list))

def naiveRMSE(a, b, dynamic_range=255.):
    total = 0.
    for value_a, value_b in zip(numpy.ravel(a), numpy.ravel(b)):
        total += (value_a * dynamic_range - value_b * dynamic_range) ** 2
    return math.sqrt(total / numpy.size(a))

def getLipschitzBound(model):
    """
    Upper bound of the model's max-norm Lipschitz constant at inference:
    each convolution is bounded by its largest per-output-channel sum of
    absolute kernel weights; ReLU, tanh, pooling and upsampling are
    1-Lipschitz; concatenation takes the larger of its inputs' bounds.
    """
    def conv(name, bound):
        weight = model[name].weight.value.astype(numpy.float64)
        return numpy.abs(weight).sum(axis=(1, 2, 3)).max() * bound
    bound = 1.
    skip_list = []
    for level in range(1, model.config.depth + 1):
        bound = conv('enc%i_conv2' % level, conv('enc%i_conv1' % level, bound))
        skip_list.append(bound)
    bound = conv('bott_conv2', conv('bott_conv1', bound))
    for level in range(model.config.depth, 0, -1):
        bound = max(conv('dec%i_up' % level, bound), skip_list.pop())
        bound = conv('dec%i_conv2' % level, conv('dec%i_conv1' % level, bound))
    return conv('head', bound)

@functools.lru_cache(maxsize=None)
def getPhantomPairList(first_seed, count):
    """
    Training pairs of default-spec phantoms with consecutive seeds.
    """
    return tuple(
        makePair(*generatePhantom({'seed': seed}))
        for seed in range(first_seed, first_seed + count)
    )

@functools.lru_cache(maxsize=None)
def getTrainedToyModel(loss):
    """
    Toy U-Net trained for 200 steps on PHANTOM_TRAIN_SET with the given
    loss. Shared between test modules; callers must not modify it.
    """
    model = build(UNetConfig.TOY)
    loss_net = None
    if loss == 'perceptual':
        loss_net = LossNetwork.random(0, (8, 16), dtype='float32')
    train(model, (getPhantomPairList(*PHANTOM_TRAIN_SET), ()), {
        'batch_size': 4,
        'epochs': 50,
        'loss': loss,
        'augment': AugmentConfig.getDisabled(),
    }, loss_net=loss_net)
    return model

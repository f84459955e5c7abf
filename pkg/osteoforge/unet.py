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
Bone extraction generator: a U-Net with a dilated bottleneck, input Gaussian
noise and a tanh output.

Layer recipe, with c_i = base_filters * 2 ** (i - 1) and
b = base_filters * 2 ** depth:
- encoder level i (1..depth): enc<i>_conv1, enc<i>_conv2 (3x3, ReLU each),
  then 2x2 max pooling; the conv2 output is the level's skip connection
- bottleneck: bott_conv1, bott_conv2 (3x3, dilated, ReLU each)
- decoder level i (depth..1): nearest x2 upsampling, dec<i>_up (3x3 to c_i,
  ReLU), concatenation with skip i, dec<i>_conv1, dec<i>_conv2 (3x3, ReLU)
- head: 1x1 conv to one channel, tanh
"""
import logging
import numpy
from .autodiff import (
    Tensor,
    asTensor,
    concatChannels,
    conv2d,
    gaussianNoise,
    gradCheck,
    maxpool2,
    relu,
    tanh,
    upsampleNearest2,
)
from .common import (
    Config,
    ConfigError,
    FormatError,
    ShapeError,
    checkPositive,
    getRandomGenerator,
)
from .weights import loadWeightFile, saveWeightFile

__all__ = (
    'UNetConfig',
    'UNet',
    'ConvLayer',
    'build',
    'forward',
    'saveWeights',
    'loadWeights',
)

logger = logging.getLogger(__name__)

MODEL_GRADCHECK_TOLERANCE = 1e-3
# Head kernel scale, relative to He-normal. Must stay within a few learning
# rates of 0, or the last decoder ReLUs die before the head settles.
HEAD_INIT_SCALE = 1e-3

class UNetConfig(Config):
    """
    input_size (int)
        Height and width of input and output images, divisible by 2 ** depth.
    base_filters (int)
        Channels of the first convolution, doubled at every level.
    depth (int)
        Number of pooling (and upsampling) levels.
    bottleneck_dilation (int)
    noise_std (float)
        Standard deviation of the Gaussian noise added to inputs in training.
    init_seed (int)
    dtype (str)
        'float32' or 'float64'.
    """
    _field_list = (
        ('input_size', 512),
        ('base_filters', 32),
        ('depth', 4),
        ('bottleneck_dilation', 2),
        ('noise_std', 0.2),
        ('init_seed', 0),
        ('dtype', 'float32'),
    )

    def validate(self):
        for name in ('input_size', 'base_filters', 'depth', 'bottleneck_dilation'):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(
                    '%s must be an integer, got %r' % (name, value),
                    field=name,
                )
            checkPositive(self, name)
        checkPositive(self, 'noise_std', strict=False)
        checkPositive(self, 'init_seed', strict=False)
        if self.input_size % 2 ** self.depth:
            raise ConfigError(
                'input_size %i is not divisible by 2 ** %i' % (
                    self.input_size,
                    self.depth,
                ),
                field='input_size',
            )
        if self.dtype not in ('float32', 'float64'):
            raise ConfigError(
                'dtype must be float32 or float64, got %r' % (self.dtype, ),
                field='dtype',
            )

UNetConfig.TOY = UNetConfig(input_size=64, base_filters=8, depth=3)

class ConvLayer:
    """
    A named convolution: weight (out x in x k x k), bias (out) and dilation.
    """
    def __init__(self, name, weight, bias, dilation=1, trainable=True):
        self.name = name
        self.weight = Tensor(weight, requires_grad=trainable, name=name + '.weight')
        self.bias = Tensor(bias, requires_grad=trainable, name=name + '.bias')
        self.dilation = dilation

    @classmethod
    def heNormal(cls, name, rng, in_channels, out_channels, kernel_size, dilation=1, dtype='float32', trainable=True, scale=1.):
        """
        He-normal (fan-in) kernel multiplied by scale, zero bias.
        """
        fan_in = in_channels * kernel_size * kernel_size
        return cls(
            name,
            (
                rng.standard_normal(
                    (out_channels, in_channels, kernel_size, kernel_size),
                ) * (scale * numpy.sqrt(2. / fan_in))
            ).astype(dtype),
            numpy.zeros(out_channels, dtype=dtype),
            dilation=dilation,
            trainable=trainable,
        )

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, self.dilation)

    def iterParameters(self):
        yield self.weight.name, self.weight
        yield self.bias.name, self.bias

def iterLayerSpec(config):
    """
    Yield (name, in_channels, out_channels, kernel_size, dilation) for
    every convolution, in initialization and storage order.
    """
    width_list = [config.base_filters * 2 ** i for i in range(config.depth)]
    in_channels = 1
    for level, width in enumerate(width_list, 1):
        yield 'enc%i_conv1' % level, in_channels, width, 3, 1
        yield 'enc%i_conv2' % level, width, width, 3, 1
        in_channels = width
    bottleneck = config.base_filters * 2 ** config.depth
    yield 'bott_conv1', in_channels, bottleneck, 3, config.bottleneck_dilation
    yield 'bott_conv2', bottleneck, bottleneck, 3, config.bottleneck_dilation
    in_channels = bottleneck
    for level in range(config.depth, 0, -1):
        width = width_list[level - 1]
        yield 'dec%i_up' % level, in_channels, width, 3, 1
        yield 'dec%i_conv1' % level, 2 * width, width, 3, 1
        yield 'dec%i_conv2' % level, width, width, 3, 1
        in_channels = width
    yield 'head', in_channels, 1, 1, 1

class UNet:
    """
    Generator instance: its configuration and convolution layers by name.
    """
    def __init__(self, config, layer_dict):
        self.config = config
        self.layer_dict = layer_dict

    @property
    def dtype(self):
        return numpy.dtype(self.config.dtype)

    def __getitem__(self, name):
        return self.layer_dict[name]

    def iterParameters(self):
        """
        Yield (tensor name, Tensor) in storage order.
        """
        for layer in self.layer_dict.values():
            yield from layer.iterParameters()

    def getParameterCount(self):
        return sum(x.value.size for _, x in self.iterParameters())

    def getSnapshot(self):
        """
        Copy of every parameter value, by tensor name.
        """
        return {name: x.value.copy() for name, x in self.iterParameters()}

    def zeroGrad(self):
        for _, tensor in self.iterParameters():
            tensor.zeroGrad()

def build(config=None):
    """
    Create a freshly initialized UNet. Kernels are drawn in layer order from
    a generator seeded by config.init_seed.
    """
    config = UNetConfig.fromDict(config)
    rng = getRandomGenerator(config.init_seed)
    layer_dict = {}
    for name, in_channels, out_channels, kernel_size, dilation in iterLayerSpec(config):
        layer_dict[name] = ConvLayer.heNormal(
            name,
            rng,
            in_channels,
            out_channels,
            kernel_size,
            dilation,
            dtype=config.dtype,
            scale=HEAD_INIT_SCALE if name == 'head' else 1.,
        )
    model = UNet(config, layer_dict)
    logger.debug(
        'Built U-Net: %i layers, %i parameters',
        len(layer_dict),
        model.getParameterCount(),
    )
    return model

def forward(model, batch, training=False, noise_seed=0):
    """
    Run the generator on an N x 1 x S x S batch (numpy array or Tensor),
    S being config.input_size. Returns an N x 1 x S x S Tensor with values
    in (-1, 1).

    training (bool)
        Enables input noise.
    noise_seed (int or sequence of ints)
        Noise stream key, typically (seed, step).
    """
    config = model.config
    x = asTensor(batch, model.dtype)
    if x.value.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(
            'expected an N x 1 x H x W batch, got shape %r' % (x.shape, ),
            field='channels',
        )
    if x.shape[2:] != (config.input_size, config.input_size):
        raise ShapeError(
            'model input size is %i, got %ix%i' % (
                (config.input_size, ) + x.shape[2:]
            ),
            field='input_size',
        )
    x = gaussianNoise(x, config.noise_std, training, noise_seed)
    skip_list = []
    for level in range(1, config.depth + 1):
        x = relu(model['enc%i_conv1' % level](x))
        x = relu(model['enc%i_conv2' % level](x))
        skip_list.append(x)
        x = maxpool2(x)
    x = relu(model['bott_conv1'](x))
    x = relu(model['bott_conv2'](x))
    for level in range(config.depth, 0, -1):
        x = relu(model['dec%i_up' % level](upsampleNearest2(x)))
        x = concatChannels(x, skip_list.pop())
        x = relu(model['dec%i_conv1' % level](x))
        x = relu(model['dec%i_conv2' % level](x))
    return tanh(model['head'](x))

def saveWeights(model, path):
    """
    Store every parameter tensor, and the generating configuration.
    Returns the manifest path.
    """
    return saveWeightFile(
        path,
        [(name, tensor.value) for name, tensor in model.iterParameters()],
        {'config': model.config.asDict()},
    )

def loadWeights(path, config=None):
    """
    Rebuild a UNet from a weights manifest.

    config (UNetConfig, dict, None)
        Expected architecture. If None, the configuration stored in the
        manifest is used.
    Raises ShapeError naming the first tensor whose name or shape does not
    match the architecture.
    """
    named_array_list, manifest = loadWeightFile(path)
    if config is None:
        if not isinstance(manifest.get('config'), dict):
            raise FormatError(
                'Manifest %r does not record a model configuration' % (path, ),
                field='config',
            )
        config = manifest['config']
    config = UNetConfig.fromDict(config)
    model = build(config)
    expected_list = list(model.iterParameters())
    for index, (expected_name, tensor) in enumerate(expected_list):
        if index >= len(named_array_list):
            raise ShapeError(
                'Tensor %r missing from %r' % (expected_name, path),
                field=expected_name,
            )
        name, array = named_array_list[index]
        if name != expected_name or array.shape != tensor.shape:
            raise ShapeError(
                'Tensor %r: expected %r with shape %r, found %r with shape %r' % (
                    expected_name,
                    expected_name,
                    tensor.shape,
                    name,
                    array.shape,
                ),
                field=expected_name,
            )
        tensor.value = array.astype(model.dtype)
    if len(named_array_list) > len(expected_list):
        name = named_array_list[len(expected_list)][0]
        raise ShapeError(
            'Unexpected tensor %r in %r' % (name, path),
            field=name,
        )
    return model

def gradCheckModel(config=None, sample=4, seed=0):
    """
    Finite-difference check of d(mean output)/d(parameters) in double
    precision, on sample randomly chosen coordinates per parameter tensor.
    The head is given a full He-normal kernel first.
    Returns the maximum relative error.
    """
    config = UNetConfig.fromDict(config or UNetConfig.TOY).replace(
        dtype='float64',
        init_seed=seed,
    )
    model = build(config)
    head = model['head']
    head.weight.value = head.weight.value / HEAD_INIT_SCALE
    batch = getRandomGenerator(seed, 1).standard_normal(
        (1, 1, config.input_size, config.input_size),
    ) * 0.5
    return gradCheck(
        lambda *_: forward(model, batch).mean(),
        [x for _, x in model.iterParameters()],
        sample=sample,
        seed=seed,
    )

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
Image-pair quality metrics: RMSE, PSNR, SSIM and multiscale SSIM.

Images are expected in [0, 1] and are scaled by the dynamic range L (255 by
default) before comparison.
"""
import math
import numpy
from scipy import ndimage
from .common import (
    Config,
    ConfigError,
    ShapeError,
    checkPositive,
)

__all__ = (
    'MetricConfig',
    'MetricReport',
    'rmse',
    'psnr',
    'ssim',
    'msssim',
    'evaluateSet',
    'getMaxScales',
)

METRIC_NAME_LIST = ('rmse', 'psnr', 'ssim', 'msssim')
_COLUMN_TITLE_DICT = {
    'rmse': 'RMSE',
    'psnr': 'PSNR[dB]',
    'ssim': 'SSIM',
    'msssim': 'MSSIM',
}
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

class MetricConfig(Config):
    """
    dynamic_range (float)
        L: [0, 1] images are multiplied by it.
    k1, k2 (float)
        SSIM stabilizing constants: C1 = (k1 L)^2, C2 = (k2 L)^2.
    window_size (int), window_sigma (float)
        Gaussian SSIM window.
    scales (int)
        MS-SSIM pyramid levels.
    weights (list of floats, None)
        MS-SSIM per-scale exponents. None picks the standard 5 weights,
        truncated to the first `scales` ones and renormalized.
    """
    _field_list = (
        ('dynamic_range', 255.0),
        ('k1', 0.01),
        ('k2', 0.03),
        ('window_size', 11),
        ('window_sigma', 1.5),
        ('scales', 5),
        ('weights', None),
    )

    def validate(self):
        checkPositive(self, 'dynamic_range')
        checkPositive(self, 'window_size')
        checkPositive(self, 'window_sigma')
        checkPositive(self, 'scales')
        if self.weights is not None:
            if len(self.weights) != self.scales:
                raise ConfigError(
                    'weights needs one value per scale (%i)' % (self.scales, ),
                    field='weights',
                )
            if abs(sum(self.weights) - 1) > 1e-6:
                raise ConfigError('weights must sum to 1', field='weights')

    def getWeights(self):
        """
        Per-scale MS-SSIM exponents, summing to 1.
        """
        if self.weights is not None:
            return tuple(self.weights)
        if self.scales > len(MSSSIM_WEIGHTS):
            raise ConfigError(
                'weights must be given for more than %i scales' % (
                    len(MSSSIM_WEIGHTS),
                ),
                field='weights',
            )
        weights = MSSSIM_WEIGHTS[:self.scales]
        total = sum(weights)
        return tuple(x / total for x in weights)

    def getWindow(self):
        """
        Normalized 1D Gaussian window; the 2D window is its outer product.
        """
        offset = numpy.arange(self.window_size) - (self.window_size - 1) / 2
        window = numpy.exp(-offset ** 2 / (2 * self.window_sigma ** 2))
        return window / window.sum()

def _getPixels(a, b):
    a = getattr(a, 'pixels', a)
    b = getattr(b, 'pixels', b)
    a = numpy.asarray(a, dtype=numpy.float64)
    b = numpy.asarray(b, dtype=numpy.float64)
    if a.shape != b.shape:
        raise ShapeError(
            'images differ in size: %r vs %r' % (a.shape, b.shape),
            field='shape',
        )
    return a, b

def rmse(a, b, cfg=None):
    """
    Root mean squared difference of L-scaled images.
    """
    cfg = MetricConfig.fromDict(cfg)
    a, b = _getPixels(a, b)
    return math.sqrt(numpy.mean(
        (a * cfg.dynamic_range - b * cfg.dynamic_range) ** 2,
    ))

def psnr(a, b, cfg=None):
    """
    Peak signal to noise ratio in dB: 20 log10(L / RMSE).
    Identical images give float('inf').
    """
    cfg = MetricConfig.fromDict(cfg)
    error = rmse(a, b, cfg)
    if error == 0:
        return math.inf
    return 20 * math.log10(cfg.dynamic_range / error)

def _filterValid(pixels, window):
    """
    Correlate with the separable window, keeping only positions where the
    window fits entirely.
    """
    half = len(window) // 2
    result = ndimage.correlate1d(pixels, window, axis=0, mode='constant')
    result = ndimage.correlate1d(result, window, axis=1, mode='constant')
    end = len(window) - 1 - half
    return result[
        half:result.shape[0] - end,
        half:result.shape[1] - end,
    ]

def _ssimTerms(a, b, cfg):
    """
    Return (luminance map, contrast-structure map) on L-scaled images.
    """
    window = cfg.getWindow()
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    mu_a = _filterValid(a, window)
    mu_b = _filterValid(b, window)
    sigma_a2 = _filterValid(a * a, window) - mu_a * mu_a
    sigma_b2 = _filterValid(b * b, window) - mu_b * mu_b
    sigma_ab = _filterValid(a * b, window) - mu_a * mu_b
    luminance = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    contrast_structure = (2 * sigma_ab + c2) / (sigma_a2 + sigma_b2 + c2)
    return luminance, contrast_structure

def _checkSize(shape, minimum):
    if min(shape) < minimum:
        raise ShapeError(
            'images must be at least %ix%i, got %r' % (minimum, minimum, shape),
            field='shape',
        )

def ssim(a, b, cfg=None):
    """
    Mean structural similarity over the Gaussian-windowed SSIM map.
    """
    cfg = MetricConfig.fromDict(cfg)
    a, b = _getPixels(a, b)
    _checkSize(a.shape, cfg.window_size)
    luminance, contrast_structure = _ssimTerms(
        a * cfg.dynamic_range,
        b * cfg.dynamic_range,
        cfg,
    )
    return float(numpy.mean(luminance * contrast_structure))

def _halve(pixels):
    height, width = pixels.shape
    pixels = pixels[:height - height % 2, :width - width % 2]
    return (
        pixels[0::2, 0::2] + pixels[0::2, 1::2] +
        pixels[1::2, 0::2] + pixels[1::2, 1::2]
    ) / 4

def msssim(a, b, cfg=None):
    """
    Multiscale SSIM: product over scales of the mean contrast-structure term
    raised to that scale's weight, times the coarsest mean luminance term
    raised to the last weight. Scales are built by 2x2 mean pooling.
    Terms are clamped at 0 before exponentiation.
    """
    cfg = MetricConfig.fromDict(cfg)
    a, b = _getPixels(a, b)
    _checkSize(a.shape, cfg.window_size * 2 ** (cfg.scales - 1))
    weights = cfg.getWeights()
    a = a * cfg.dynamic_range
    b = b * cfg.dynamic_range
    result = 1.0
    for scale, weight in enumerate(weights):
        luminance, contrast_structure = _ssimTerms(a, b, cfg)
        result *= max(0.0, float(numpy.mean(contrast_structure))) ** weight
        if scale == len(weights) - 1:
            result *= max(0.0, float(numpy.mean(luminance))) ** weight
        else:
            a = _halve(a)
            b = _halve(b)
    return result

def getMaxScales(shape, cfg=None):
    """
    Largest MS-SSIM scale count images of given shape support, at most the
    number of standard weights. Raises ShapeError if even one scale does not
    fit.
    """
    cfg = MetricConfig.fromDict(cfg)
    _checkSize(shape, cfg.window_size)
    scales = 1
    while (
        scales < len(MSSSIM_WEIGHTS) and
        cfg.window_size * 2 ** scales <= min(shape)
    ):
        scales += 1
    return scales

class MetricReport:
    """
    Per-image metrics and their aggregates.

    per_image (list of dicts)
        One {metric name: value} dict per image pair.
    aggregate (dict)
        metric name -> (mean, population std), over finite values only.
    label (str)
        Row title in text tables.

    asDict output is strict JSON: infinite values (PSNR of identical
    images) become null, and each aggregate counts them in "infinite".
    """
    def __init__(self, per_image, label='model'):
        self.per_image = list(per_image)
        self.label = label
        self.aggregate = {
            name: _getMeanStd([x[name] for x in self.per_image])
            for name in METRIC_NAME_LIST
        }

    def asDict(self):
        return {
            'label': self.label,
            'count': len(self.per_image),
            'aggregate': {
                name: {
                    'mean': _getJSONValue(mean),
                    'std': std,
                    'infinite': sum(
                        not math.isfinite(x[name]) for x in self.per_image
                    ),
                }
                for name, (mean, std) in self.aggregate.items()
            },
            'per_image': [
                {name: _getJSONValue(value) for name, value in x.items()}
                for x in self.per_image
            ],
        }

    def formatRow(self):
        """
        One table row: label then "mean(std)" for each metric.
        """
        return [self.label] + [
            '%.4g(%.2g)' % self.aggregate[name]
            for name in METRIC_NAME_LIST
        ]

def formatTable(report_list):
    """
    Aligned-column text table, one row per report.
    """
    row_list = [['Method'] + [_COLUMN_TITLE_DICT[x] for x in METRIC_NAME_LIST]]
    row_list.extend(x.formatRow() for x in report_list)
    width_list = [
        max(len(row[column]) for row in row_list)
        for column in range(len(row_list[0]))
    ]
    return '\n'.join(
        '  '.join(
            cell.ljust(width) for cell, width in zip(row, width_list)
        ).rstrip()
        for row in row_list
    )

def _getMeanStd(value_list):
    """
    (mean, population std) of the finite values. If there are none (PSNR of
    identical images only), returns (inf, 0.0).
    """
    values = numpy.array(value_list, dtype=numpy.float64)
    values = values[numpy.isfinite(values)]
    if not values.size:
        return math.inf, 0.0
    return float(values.mean()), float(values.std())

def _getJSONValue(value):
    # JSON has no infinity: null stands for it.
    return value if math.isfinite(value) else None

def evaluateSet(pair_list, cfg=None, label='model'):
    """
    Compute every metric for each (prediction, target) pair.
    Returns a MetricReport.
    """
    cfg = MetricConfig.fromDict(cfg)
    pair_list = list(pair_list)
    if not pair_list:
        raise ShapeError('empty evaluation set', field='pairs')
    return MetricReport(
        [
            {
                'rmse': rmse(prediction, target, cfg),
                'psnr': psnr(prediction, target, cfg),
                'ssim': ssim(prediction, target, cfg),
                'msssim': msssim(prediction, target, cfg),
            }
            for prediction, target in pair_list
        ],
        label=label,
    )

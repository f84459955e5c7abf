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
Radiograph pre-processing and paired data augmentation.
"""
import math
import numpy
from scipy import ndimage
from .common import (
    PREPROCESS,
    Config,
    ConfigError,
    checkPositive,
    checkProbability,
    getRandomGenerator,
)
# pylint: disable=no-name-in-module
from .common import (
    RANGE_UNIT,
    RANGE_STANDARDIZED,
    RANGE_BINARY,
    PREPROCESS_STANDARDIZE,
    PREPROCESS_HE_CLAHE,
    PREPROCESS_NONE,
)
# pylint: enable=no-name-in-module
from .image import TrainingPair

__all__ = (
    'AugmentConfig',
    'minmaxNormalize',
    'standardize',
    'histEq',
    'clahe',
    'sharpen',
    'augment',
    'preprocess',
    'resample',
)

HISTOGRAM_BINS = 256

def _gaussianKernel(size, sigma):
    offset = numpy.arange(size) - (size - 1) / 2
    kernel_1d = numpy.exp(-offset ** 2 / (2 * sigma ** 2))
    kernel = numpy.outer(kernel_1d, kernel_1d)
    return kernel / kernel.sum()

_SHARPEN_KERNEL = _gaussianKernel(5, 1.0)

def minmaxNormalize(img):
    """
    Map pixels linearly to [0, 1]. A constant image becomes all zeros.
    """
    pixels = img.pixels
    low = pixels.min()
    span = pixels.max() - low
    if span == 0:
        return img.withPixels(numpy.zeros_like(pixels), RANGE_UNIT)
    # Rounding may overshoot 1 by an ulp.
    return img.withPixels(
        numpy.clip((pixels - low) / span, 0, 1),
        RANGE_UNIT,
    )

def standardize(img, mean_target=0.0, std_target=0.5):
    """
    Shift and scale pixels to given mean and (population) standard
    deviation. A constant image becomes all mean_target.
    """
    pixels = img.pixels
    std = pixels.std()
    if std == 0:
        return img.withPixels(
            numpy.full_like(pixels, mean_target),
            RANGE_STANDARDIZED,
        )
    return img.withPixels(
        (pixels - pixels.mean()) / std * std_target + mean_target,
        RANGE_STANDARDIZED,
    )

def _getBinIndex(pixels, bins):
    return numpy.clip(
        numpy.floor(pixels * bins).astype(numpy.intp),
        0,
        bins - 1,
    )

def _getMapping(histogram, clip_threshold=None):
    """
    Equalization lookup table from a histogram, optionally clipped at
    clip_threshold with the excess spread uniformly over all bins in a single
    pass (integer share, remainder discarded).
    Returns None when the histogram is degenerate (single occupied level).
    """
    histogram = histogram.astype(numpy.int64)
    if clip_threshold is not None:
        excess = numpy.maximum(histogram - clip_threshold, 0).sum()
        histogram = numpy.minimum(histogram, clip_threshold)
        histogram += excess // len(histogram)
    total = histogram.sum()
    cdf = numpy.cumsum(histogram) / total
    cdf_min = cdf[numpy.flatnonzero(histogram)[0]]
    if cdf_min >= 1:
        return None
    return numpy.clip((cdf - cdf_min) / (1 - cdf_min), 0, 1)

def histEq(img, bins=HISTOGRAM_BINS, clip=None):
    """
    Global histogram equalization of a [0, 1] image over uniform bins:
    each pixel maps to (cdf - cdf_min) / (1 - cdf_min) of its bin.
    A constant image is returned unchanged.

    clip (float, None)
        If given, clip the histogram as clahe does for a single tile.
    """
    pixels = img.pixels
    index = _getBinIndex(pixels, bins)
    histogram = numpy.bincount(index.ravel(), minlength=bins)
    clip_threshold = None
    if clip is not None:
        clip_threshold = max(1, int(round(clip * pixels.size)))
    mapping = _getMapping(histogram, clip_threshold)
    if mapping is None:
        return img.withPixels(pixels.copy(), RANGE_UNIT)
    return img.withPixels(mapping[index], RANGE_UNIT)

def _getTileCenterList(size, window):
    start_list = list(range(0, size, window))
    return start_list, numpy.array([
        (start + min(start + window, size) - 1) / 2
        for start in start_list
    ])

def clahe(img, window=(40, 40), clip=0.01):
    """
    Contrast-limited adaptive histogram equalization of a [0, 1] image.

    window ((rows, columns))
        Tile size. Edge tiles may be smaller. A window larger than the image
        gives a single tile, equivalent to histEq(img, clip=clip).
    clip (float)
        Clip limit as a fraction of tile pixel count: bins are clipped at
        max(1, round(clip * tile pixel count)).

    Per-tile mappings are combined by bilinear interpolation between the
    four nearest tile centers.
    """
    pixels = img.pixels
    if pixels.min() == pixels.max():
        return img.withPixels(pixels.copy(), RANGE_UNIT)
    height, width = pixels.shape
    bins = HISTOGRAM_BINS
    index = _getBinIndex(pixels, bins)
    row_start_list, row_center = _getTileCenterList(height, window[0])
    col_start_list, col_center = _getTileCenterList(width, window[1])
    # Per-tile lookup tables; identity marks tiles with a single level,
    # which leave their pixels unchanged.
    table = numpy.zeros((len(row_start_list), len(col_start_list), bins))
    identity = numpy.zeros((len(row_start_list), len(col_start_list)), dtype=bool)
    for tile_row, row_start in enumerate(row_start_list):
        for tile_col, col_start in enumerate(col_start_list):
            tile = index[
                row_start:row_start + window[0],
                col_start:col_start + window[1],
            ]
            mapping = _getMapping(
                numpy.bincount(tile.ravel(), minlength=bins),
                max(1, int(round(clip * tile.size))),
            )
            if mapping is None:
                identity[tile_row, tile_col] = True
            else:
                table[tile_row, tile_col] = mapping
    # Continuous tile coordinates, clamped to the outermost centers.
    row_position = numpy.interp(
        numpy.arange(height),
        row_center,
        numpy.arange(len(row_center)),
    )
    col_position = numpy.interp(
        numpy.arange(width),
        col_center,
        numpy.arange(len(col_center)),
    )
    row_0 = numpy.floor(row_position).astype(numpy.intp)
    col_0 = numpy.floor(col_position).astype(numpy.intp)
    row_1 = numpy.minimum(row_0 + 1, len(row_center) - 1)
    col_1 = numpy.minimum(col_0 + 1, len(col_center) - 1)
    row_weight = (row_position - row_0)[:, numpy.newaxis]
    col_weight = (col_position - col_0)[numpy.newaxis, :]

    def pick(tile_row, tile_col):
        tile_row = tile_row[:, numpy.newaxis]
        tile_col = tile_col[numpy.newaxis, :]
        return numpy.where(
            identity[tile_row, tile_col],
            pixels,
            table[tile_row, tile_col, index],
        )

    result = (
        (1 - row_weight) * (
            (1 - col_weight) * pick(row_0, col_0) + col_weight * pick(row_0, col_1)
        ) +
        row_weight * (
            (1 - col_weight) * pick(row_1, col_0) + col_weight * pick(row_1, col_1)
        )
    )
    return img.withPixels(numpy.clip(result, 0, 1), RANGE_UNIT)

def sharpen(img, alpha=0.5):
    """
    Unsharp masking: img + alpha * (img - blur(img)), blur being a 5x5
    Gaussian (sigma 1) with reflected borders. Unit images are clamped back
    to [0, 1].
    """
    result = _unsharp(img.pixels, alpha)
    if img.range_tag == RANGE_UNIT:
        result = numpy.clip(result, 0, 1)
    return img.withPixels(result)

def _unsharp(pixels, alpha):
    if alpha == 0:
        return pixels.copy()
    blurred = ndimage.correlate(pixels, _SHARPEN_KERNEL, mode='reflect')
    return pixels + alpha * (pixels - blurred)

def resample(img, height, width):
    """
    Bilinear resampling to (height, width), corners aligned.
    Returns img itself when it already has that size.
    """
    if img.shape == (height, width):
        return img
    in_height, in_width = img.shape
    rows = numpy.linspace(0, in_height - 1, height)
    cols = numpy.linspace(0, in_width - 1, width)
    grid = numpy.meshgrid(rows, cols, indexing='ij')
    result = ndimage.map_coordinates(img.pixels, grid, order=1, mode='nearest')
    if img.range_tag == RANGE_UNIT:
        result = numpy.clip(result, 0, 1)
    elif img.range_tag == RANGE_BINARY:
        result = (result >= 0.5).astype(numpy.float64)
    return img.withPixels(result)

def preprocess(img, selector=PREPROCESS_STANDARDIZE):
    """
    Prepare a radiograph for the network.

    selector (str)
        "standardize": mean 0, std 0.5.
        "he_clahe": min-max to [0, 1], global histogram equalization, then
        CLAHE with 40x40 tiles and clip limit 0.01.
        "none": unchanged.
    """
    if selector == PREPROCESS_STANDARDIZE:
        return standardize(img)
    if selector == PREPROCESS_HE_CLAHE:
        return clahe(histEq(minmaxNormalize(img)))
    if selector == PREPROCESS_NONE:
        return img
    raise ConfigError(
        'preprocess must be one of %r, got %r' % (PREPROCESS.values(), selector),
        field='preprocess',
    )

class AugmentConfig(Config):
    """
    Random augmentation menu.

    horizontal_flip (probability)
    noise_std (float)
        Additive Gaussian noise sigma, as a fraction of the image's
        intensity span (max - min).
    bias_range (float)
        Additive offset drawn in [-bias_range, bias_range], as a fraction of
        the intensity span.
    zoom_range (float)
        Spatial scale drawn in [1 - zoom_range, 1 + zoom_range].
    sharpen_alpha (float), sharpen_prob (probability)
    rotation_deg (float)
        Maximum absolute rotation.
    shift_range (float)
        Maximum absolute shift, as a fraction of image size.
    seed (int)
    """
    _field_list = (
        ('horizontal_flip', 0.5),
        ('noise_std', 0.02),
        ('bias_range', 0.2),
        ('zoom_range', 0.3),
        ('sharpen_alpha', 0.5),
        ('sharpen_prob', 0.5),
        ('rotation_deg', 0.0),
        ('shift_range', 0.0),
        ('seed', 0),
    )

    def validate(self):
        checkProbability(self, 'horizontal_flip')
        checkProbability(self, 'sharpen_prob')
        for name in (
            'noise_std',
            'bias_range',
            'zoom_range',
            'sharpen_alpha',
            'rotation_deg',
            'shift_range',
            'seed',
        ):
            checkPositive(self, name, strict=False)
        if self.zoom_range >= 1:
            raise ConfigError('zoom_range must be below 1', field='zoom_range')

    @classmethod
    def getDisabled(cls):
        """
        A configuration under which augment is the identity.
        """
        return cls(
            horizontal_flip=0.0,
            noise_std=0.0,
            bias_range=0.0,
            zoom_range=0.0,
            sharpen_alpha=0.0,
            sharpen_prob=0.0,
        )

def _affine(pixels, zoom, angle_deg, shift, order):
    """
    Zoom and rotate about the image center, then shift (rows, columns).
    Out-of-frame pixels are 0.
    """
    angle = math.radians(angle_deg)
    forward = zoom * numpy.array((
        (math.cos(angle), -math.sin(angle)),
        (math.sin(angle), math.cos(angle)),
    ))
    matrix = numpy.linalg.inv(forward)
    center = (numpy.array(pixels.shape) - 1) / 2
    offset = center - matrix @ (center + numpy.asarray(shift))
    return ndimage.affine_transform(
        pixels,
        matrix,
        offset=offset,
        order=order,
        mode='constant',
        cval=0.0,
    )

def _keepRange(image, pixels):
    if image.range_tag == RANGE_UNIT:
        pixels = numpy.clip(pixels, 0, 1)
    return image.withPixels(pixels)

def _intensity(image, noise, bias, sharpen_alpha):
    pixels = image.pixels
    span = pixels.max() - pixels.min()
    pixels = _unsharp(pixels + span * bias + span * noise, sharpen_alpha)
    return _keepRange(image, pixels)

def augment(pair, cfg, draw_index):
    """
    Randomly transform a TrainingPair.

    Geometric transforms (flip, zoom, rotation, shift) are applied
    identically to all three images, the mask using nearest-neighbour
    sampling. Intensity transforms (bias, noise, sharpening) are applied to
    source and target only.
    Result only depends on (pair, cfg, draw_index).
    """
    cfg = AugmentConfig.fromDict(cfg)
    rng = getRandomGenerator(cfg.seed, draw_index)
    height, width = pair.shape
    # Always draw every value, so the stream does not depend on the config.
    flip = rng.random() < cfg.horizontal_flip
    zoom = 1 + rng.uniform(-1, 1) * cfg.zoom_range
    angle = rng.uniform(-1, 1) * cfg.rotation_deg
    shift = rng.uniform(-1, 1, 2) * cfg.shift_range * numpy.array((height, width))
    bias = rng.uniform(-1, 1) * cfg.bias_range
    do_sharpen = rng.random() < cfg.sharpen_prob
    source_noise = rng.standard_normal((height, width)) * cfg.noise_std
    target_noise = rng.standard_normal((height, width)) * cfg.noise_std
    is_identity = zoom == 1 and angle == 0 and not shift.any()

    def geometric(image, order):
        pixels = image.pixels
        if flip:
            pixels = pixels[:, ::-1]
        if not is_identity:
            pixels = _affine(pixels, zoom, angle, shift, order)
        else:
            pixels = pixels.copy()
        return pixels

    sharpen_alpha = cfg.sharpen_alpha if do_sharpen else 0
    source = _keepRange(pair.source, geometric(pair.source, 1))
    target = _keepRange(pair.target, geometric(pair.target, 1))
    mask = pair.nodule_mask.withPixels(
        (geometric(pair.nodule_mask, 0) >= 0.5).astype(numpy.float64),
    )
    return TrainingPair(
        _intensity(source, source_noise, bias, sharpen_alpha),
        _intensity(target, target_noise, bias, sharpen_alpha),
        mask,
    )

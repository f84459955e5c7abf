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
2D radiographs and training pairs, with their file formats.

Image header "<name>.img.json":
  {"width": W, "height": H, "dtype": "f32le", "range": <tag>,
   "data": "<name>.img.raw"}
Raw file: W * H row-major little-endian 32-bit floats (row index is z).
"""
import json
import logging
import os
import numpy
from .common import (
    RANGE,
    FormatError,
    RangeError,
    ShapeError,
    splitName,
)
# pylint: disable=no-name-in-module
from .common import (
    RANGE_RAW,
    RANGE_UNIT,
    RANGE_BINARY,
)
# pylint: enable=no-name-in-module

__all__ = (
    'RadiographImage',
    'TrainingPair',
    'loadImage',
    'saveImage',
    'exportPGM',
    'loadPair',
    'savePair',
)

logger = logging.getLogger(__name__)

IMAGE_SUFFIX = '.img.json'
RAW_SUFFIX = '.img.raw'
_DTYPE_NAME = 'f32le'
_DTYPE = numpy.dtype('<f4')
_PAIR_ROLE_LIST = ('source', 'target', 'mask')

class RadiographImage:
    """
    A 2D scalar image.

    pixels (2D array-like, height x width)
        Stored as float64.
    range_tag (str)
        One of "raw", "unit" (values in [0, 1]), "standardized", "binary"
        (values in {0, 1}).
    """
    def __init__(self, pixels, range_tag=RANGE_RAW):
        pixels = numpy.array(pixels, dtype=numpy.float64)
        if pixels.ndim != 2 or 0 in pixels.shape:
            raise ShapeError(
                'pixels must be a non-empty 2D array, got shape %r' % (
                    pixels.shape,
                ),
                field='pixels',
            )
        if range_tag not in RANGE:
            raise RangeError('Unknown range tag %r' % (range_tag, ), field='range')
        if range_tag == RANGE_UNIT and (pixels.min() < 0 or pixels.max() > 1):
            raise RangeError(
                'unit image values must lie in [0, 1], got [%r, %r]' % (
                    pixels.min(), pixels.max(),
                ),
                field='pixels',
            )
        if range_tag == RANGE_BINARY and not numpy.isin(pixels, (0, 1)).all():
            raise RangeError('binary image must only contain 0 and 1', field='pixels')
        self.pixels = pixels
        self.range_tag = range_tag

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def shape(self):
        """
        (height, width), as numpy orders it.
        """
        return self.pixels.shape

    def withPixels(self, pixels, range_tag=None):
        """
        Return a new image with given pixels, and same range tag unless
        another is given.
        """
        return RadiographImage(
            pixels,
            self.range_tag if range_tag is None else range_tag,
        )

    def __eq__(self, other):
        return (
            isinstance(other, RadiographImage) and
            self.range_tag == other.range_tag and
            numpy.array_equal(self.pixels, other.pixels)
        )

    def __repr__(self):
        return 'RadiographImage(width=%i, height=%i, range_tag=%r)' % (
            self.width,
            self.height,
            self.range_tag,
        )

class TrainingPair:
    """
    A (source DRR, target bone X-ray, nodule mask) triple sharing dimensions.
    """
    def __init__(self, source, target, nodule_mask):
        if not source.shape == target.shape == nodule_mask.shape:
            raise ShapeError(
                'pair images differ in size: %r, %r, %r' % (
                    source.shape, target.shape, nodule_mask.shape,
                ),
                field='pair',
            )
        if nodule_mask.range_tag != RANGE_BINARY:
            raise RangeError('nodule mask must be binary', field='nodule_mask')
        self.source = source
        self.target = target
        self.nodule_mask = nodule_mask

    @property
    def shape(self):
        return self.source.shape

    def __eq__(self, other):
        return (
            isinstance(other, TrainingPair) and
            self.source == other.source and
            self.target == other.target and
            self.nodule_mask == other.nodule_mask
        )

def loadImage(path):
    """
    Read an image from its "<name>.img.json" header.
    """
    try:
        with open(path, encoding='utf-8') as header_file:
            header = json.load(header_file)
    except FileNotFoundError:
        raise FormatError('No such file: %r' % (path, ), field='header') from None
    except ValueError as exc:
        raise FormatError('Malformed header %r: %s' % (path, exc), field='header') from None
    if not isinstance(header, dict):
        raise FormatError('Header must be a JSON object', field='header')
    for name in ('width', 'height'):
        value = header.get(name)
        if not isinstance(value, int) or value < 1:
            raise FormatError('%s must be a positive integer' % (name, ), field=name)
    if header.get('dtype') != _DTYPE_NAME:
        raise FormatError(
            'dtype must be %r, got %r' % (_DTYPE_NAME, header.get('dtype')),
            field='dtype',
        )
    if header.get('range') not in RANGE:
        raise FormatError('Unknown range %r' % (header.get('range'), ), field='range')
    raw_path = os.path.join(os.path.dirname(path), str(header.get('data')))
    width, height = header['width'], header['height']
    try:
        raw_size = os.path.getsize(raw_path)
    except FileNotFoundError:
        raise FormatError('No such raw file: %r' % (raw_path, ), field='data') from None
    if raw_size != width * height * _DTYPE.itemsize:
        raise FormatError(
            'raw file %r is %i bytes, expected %i' % (
                raw_path, raw_size, width * height * _DTYPE.itemsize,
            ),
            field='data',
        )
    pixels = numpy.fromfile(raw_path, dtype=_DTYPE).reshape((height, width))
    return RadiographImage(pixels, header['range'])

def saveImage(img, path):
    """
    Write img as "<name>.img.json" plus "<name>.img.raw".
    Pixels are stored as 32-bit floats. Returns the header path.
    """
    directory, name = splitName(path, IMAGE_SUFFIX)
    raw_name = name + RAW_SUFFIX
    header_path = os.path.join(directory, name + IMAGE_SUFFIX)
    pixels = img.pixels.astype(_DTYPE)
    if img.range_tag == RANGE_UNIT:
        # float64 -> float32 rounding must not leave [0, 1].
        pixels = numpy.clip(pixels, 0, 1)
    with open(os.path.join(directory, raw_name), 'wb') as raw_file:
        raw_file.write(pixels.tobytes())
    with open(header_path, 'w', encoding='utf-8') as header_file:
        json.dump({
            'width': img.width,
            'height': img.height,
            'dtype': _DTYPE_NAME,
            'range': img.range_tag,
            'data': raw_name,
        }, header_file, indent=1)
        header_file.write('\n')
    logger.debug('wrote %s', header_path)
    return header_path

def exportPGM(img, path):
    """
    Write a 16-bit binary PGM (P5, maxval 65535), mapping the image minimum
    to 0 and its maximum to 65535 linearly. A constant image is all zeros.
    """
    pixels = img.pixels
    low = pixels.min()
    span = pixels.max() - low
    if span > 0:
        scaled = numpy.rint((pixels - low) / span * 65535)
    else:
        scaled = numpy.zeros_like(pixels)
    with open(path, 'wb') as pgm_file:
        pgm_file.write(b'P5\n%i %i\n65535\n' % (img.width, img.height))
        # PGM stores 16-bit samples most significant byte first.
        pgm_file.write(scaled.astype('>u2').tobytes())
    return path

def savePair(pair, path_prefix):
    """
    Write the three images of pair as "<prefix>.<role>.img.json".
    Returns a dict mapping role ("source", "target", "mask") to header path.
    """
    return {
        role: saveImage(image, '%s.%s%s' % (path_prefix, role, IMAGE_SUFFIX))
        for role, image in zip(
            _PAIR_ROLE_LIST,
            (pair.source, pair.target, pair.nodule_mask),
        )
    }

def loadPair(path_dict):
    """
    Inverse of savePair.
    """
    try:
        return TrainingPair(*(loadImage(path_dict[x]) for x in _PAIR_ROLE_LIST))
    except KeyError as exc:
        raise FormatError('Pair entry lacks %s' % (exc, ), field=exc.args[0]) from None

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
HU volumes: data model, file I/O, parametric thorax phantom and bone
windowing.

Voxel order is x-fastest: flat index = x + X * (y + Y * z). In memory, data is
a numpy array of shape (Z, Y, X), so a projection ray along y strides by X.
"""
import json
import logging
import os
import numpy
from .common import (
    Config,
    ConfigError,
    FormatError,
    RangeError,
    HU_MIN,
    HU_MAX,
    HU_AIR,
    checkPositive,
    getRandomGenerator,
    splitName,
)

__all__ = (
    'Volume',
    'NoduleAnnotation',
    'PhantomSpec',
    'loadVolume',
    'saveVolume',
    'loadAnnotations',
    'saveAnnotations',
    'generatePhantom',
    'boneWindow',
)

logger = logging.getLogger(__name__)

VOLUME_SUFFIX = '.vol.json'
RAW_SUFFIX = '.vol.raw'
ANNOTATION_SUFFIX = '.nod.json'
_DTYPE_NAME = 'i16le'
_DTYPE = numpy.dtype('<i2')

BONE_WINDOW = (300, 700)

class Volume:
    """
    A 3D grid of signed 16-bit HU values.

    dims ((X, Y, Z) ints)
        Grid size. Y is the projection depth.
    spacing_mm ((sx, sy, sz) floats)
        Voxel size, carried along but not used by the parallel projector.
    data (numpy array)
        Either X * Y * Z values in x-fastest order, or an array of shape
        (Z, Y, X). Stored as int16 of shape (Z, Y, X).
    """
    def __init__(self, dims, spacing_mm, data):
        dims = tuple(int(x) for x in dims)
        spacing_mm = tuple(float(x) for x in spacing_mm)
        if len(dims) != 3 or min(dims) < 1:
            raise FormatError('dims must be 3 positive integers, got %r' % (
                dims,
            ), field='dims')
        if len(spacing_mm) != 3 or min(spacing_mm) <= 0:
            raise FormatError(
                'spacing_mm must be 3 positive reals, got %r' % (spacing_mm, ),
                field='spacing_mm',
            )
        x_size, y_size, z_size = dims
        data = numpy.asarray(data)
        if data.size != x_size * y_size * z_size:
            raise FormatError(
                'data has %i values, dims %r need %i' % (
                    data.size, dims, x_size * y_size * z_size,
                ),
                field='data',
            )
        if data.size and (data.min() < HU_MIN or data.max() > HU_MAX):
            raise RangeError(
                'HU values must lie in [%i, %i], got [%i, %i]' % (
                    HU_MIN, HU_MAX, data.min(), data.max(),
                ),
                field='data',
            )
        self.dims = dims
        self.spacing_mm = spacing_mm
        self.data = data.astype(numpy.int16).reshape((z_size, y_size, x_size))

    def __eq__(self, other):
        return (
            isinstance(other, Volume) and
            self.dims == other.dims and
            self.spacing_mm == other.spacing_mm and
            numpy.array_equal(self.data, other.data)
        )

    def __repr__(self):
        return 'Volume(dims=%r, spacing_mm=%r)' % (self.dims, self.spacing_mm)

    def withData(self, data):
        """
        Return a Volume with the same geometry and given (Z, Y, X) data.
        """
        return Volume(self.dims, self.spacing_mm, data)

class NoduleAnnotation:
    """
    An axis-aligned ellipsoidal nodule, in voxel coordinates.
    """
    def __init__(self, center_vox, radii_vox):
        center_vox = tuple(float(x) for x in center_vox)
        radii_vox = tuple(float(x) for x in radii_vox)
        if len(center_vox) != 3:
            raise FormatError('center_vox needs 3 values', field='center_vox')
        if len(radii_vox) != 3 or min(radii_vox) <= 0:
            raise FormatError(
                'radii_vox must be 3 strictly positive values, got %r' % (
                    radii_vox,
                ),
                field='radii_vox',
            )
        self.center_vox = center_vox
        self.radii_vox = radii_vox

    def checkInside(self, dims):
        """
        Raise RangeError if the center lies outside [0, X) x [0, Y) x [0, Z).
        """
        for axis, (center, size) in zip('xyz', zip(self.center_vox, dims)):
            if not 0 <= center < size:
                raise RangeError(
                    'nodule center %s=%r outside [0, %i)' % (axis, center, size),
                    field='center_vox',
                )

    def asDict(self):
        return {
            'center_vox': list(self.center_vox),
            'radii_vox': list(self.radii_vox),
        }

    def __eq__(self, other):
        return (
            isinstance(other, NoduleAnnotation) and
            self.center_vox == other.center_vox and
            self.radii_vox == other.radii_vox
        )

    def __repr__(self):
        return 'NoduleAnnotation(center_vox=%r, radii_vox=%r)' % (
            self.center_vox,
            self.radii_vox,
        )

def _readJSON(path, field):
    try:
        with open(path, encoding='utf-8') as json_file:
            return json.load(json_file)
    except FileNotFoundError:
        raise FormatError('No such file: %r' % (path, ), field=field) from None
    except ValueError as exc:
        raise FormatError(
            'Malformed JSON in %r: %s' % (path, exc),
            field=field,
        ) from None

def _writeJSON(path, value):
    with open(path, 'w', encoding='utf-8') as json_file:
        json.dump(value, json_file, indent=1, allow_nan=False)
        json_file.write('\n')

def _getTriple(header, name, cast):
    value = header.get(name)
    if not isinstance(value, list) or len(value) != 3:
        raise FormatError('%s must be a list of 3 numbers' % (name, ), field=name)
    try:
        return tuple(cast(x) for x in value)
    except (TypeError, ValueError):
        raise FormatError(
            '%s must be a list of 3 numbers, got %r' % (name, value),
            field=name,
        ) from None

def loadVolume(path):
    """
    Read a volume from its "<name>.vol.json" header and the raw file it
    names. Values are returned untouched.
    """
    header = _readJSON(path, 'header')
    if not isinstance(header, dict):
        raise FormatError('Header must be a JSON object', field='header')
    dims = _getTriple(header, 'dims', int)
    spacing_mm = _getTriple(header, 'spacing_mm', float)
    if header.get('dtype') != _DTYPE_NAME:
        raise FormatError(
            'dtype must be %r, got %r' % (_DTYPE_NAME, header.get('dtype')),
            field='dtype',
        )
    raw_name = header.get('data')
    if not isinstance(raw_name, str) or not raw_name:
        raise FormatError('data must name the raw file', field='data')
    raw_path = os.path.join(os.path.dirname(path), raw_name)
    try:
        raw_size = os.path.getsize(raw_path)
    except FileNotFoundError:
        raise FormatError(
            'No such raw file: %r' % (raw_path, ),
            field='data',
        ) from None
    if min(dims) < 1:
        raise FormatError('dims must be positive, got %r' % (dims, ), field='dims')
    expected_size = dims[0] * dims[1] * dims[2] * _DTYPE.itemsize
    if raw_size != expected_size:
        raise FormatError(
            'raw file %r is %i bytes, dims %r need %i' % (
                raw_path, raw_size, dims, expected_size,
            ),
            field='data',
        )
    data = numpy.fromfile(raw_path, dtype=_DTYPE)
    return Volume(dims, spacing_mm, data)

def saveVolume(vol, path):
    """
    Write vol as "<name>.vol.json" plus "<name>.vol.raw".
    Output bytes only depend on vol.
    Returns the header path.
    """
    directory, name = splitName(path, VOLUME_SUFFIX)
    raw_name = name + RAW_SUFFIX
    header_path = os.path.join(directory, name + VOLUME_SUFFIX)
    with open(os.path.join(directory, raw_name), 'wb') as raw_file:
        raw_file.write(vol.data.astype(_DTYPE).tobytes())
    _writeJSON(header_path, {
        'dims': list(vol.dims),
        'spacing_mm': list(vol.spacing_mm),
        'dtype': _DTYPE_NAME,
        'data': raw_name,
    })
    logger.debug('wrote %s', header_path)
    return header_path

def loadAnnotations(path):
    """
    Read a "<name>.nod.json" list of NoduleAnnotation.
    """
    value = _readJSON(path, 'annotations')
    if not isinstance(value, list):
        raise FormatError('Annotations must be a JSON array', field='annotations')
    result = []
    for item in value:
        if not isinstance(item, dict):
            raise FormatError('Annotation must be an object', field='annotations')
        result.append(NoduleAnnotation(
            _getTriple(item, 'center_vox', float),
            _getTriple(item, 'radii_vox', float),
        ))
    return result

def saveAnnotations(annotation_list, path):
    """
    Write a "<name>.nod.json" file. Returns its path.
    """
    directory, name = splitName(path, ANNOTATION_SUFFIX)
    path = os.path.join(directory, name + ANNOTATION_SUFFIX)
    _writeJSON(path, [x.asDict() for x in annotation_list])
    return path

# Thorax geometry, as fractions of the volume size along (x, y, z).
_BODY_RADII = (0.45, 0.40, 0.48)
_LUNG_OFFSET_X = 0.20
_LUNG_RADII = (0.14, 0.28, 0.34)
_RIB_RADII = (0.41, 0.36)
_RIB_THICKNESS = 0.12
_RIB_Z_RANGE = (0.22, 0.78)
_SPINE_OFFSET_Y = 0.24
_SPINE_RADIUS = 0.07

class PhantomSpec(Config):
    """
    Parametric thorax phantom.

    dims ((X, Y, Z))
    spacing_mm ((sx, sy, sz))
    body, lungs, spine (bool)
        Whether to insert the soft-tissue body ellipsoid, the two lung
        ellipsoids and the spine cylinder.
    rib_count (int)
        Number of rib arcs, evenly spaced along z over the lungs.
    nodule_count (int)
        Number of randomly placed spherical nodules (inside the lungs when
        present).
    nodule_radius_range ((lo, hi) voxels)
    nodule_list (list of {"center_vox", "radii_vox"} dicts)
        Explicitly placed nodules, inserted after the random ones.
    soft_tissue_hu, lung_hu, bone_hu, nodule_hu (int)
    seed (int)
    """
    _field_list = (
        ('dims', (64, 64, 64)),
        ('spacing_mm', (1.0, 1.0, 1.0)),
        ('body', True),
        ('lungs', True),
        ('spine', True),
        ('rib_count', 6),
        ('nodule_count', 1),
        ('nodule_radius_range', (1.5, 3.0)),
        ('nodule_list', ()),
        ('soft_tissue_hu', 40),
        ('lung_hu', -800),
        ('bone_hu', 500),
        ('nodule_hu', 50),
        ('seed', 0),
    )

    def validate(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigError('dims must be 3 positive integers', field='dims')
        for name in ('rib_count', 'nodule_count', 'seed'):
            checkPositive(self, name, strict=False)
        for name in ('soft_tissue_hu', 'lung_hu', 'bone_hu', 'nodule_hu'):
            value = getattr(self, name)
            if not HU_MIN <= value <= HU_MAX:
                raise ConfigError(
                    '%s must lie in [%i, %i], got %r' % (
                        name, HU_MIN, HU_MAX, value,
                    ),
                    field=name,
                )
        lo, hi = BONE_WINDOW
        if (self.spine or self.rib_count) and not lo <= self.bone_hu <= hi:
            raise ConfigError(
                'bone_hu must lie in the bone window [%i, %i]' % (lo, hi),
                field='bone_hu',
            )
        radius_lo, radius_hi = self.nodule_radius_range
        if not 0 < radius_lo <= radius_hi:
            raise ConfigError(
                'nodule_radius_range must satisfy 0 < lo <= hi',
                field='nodule_radius_range',
            )

def _ellipsoid(grid, center, radii):
    z, y, x = grid
    return (
        ((x - center[0]) / radii[0]) ** 2 +
        ((y - center[1]) / radii[1]) ** 2 +
        ((z - center[2]) / radii[2]) ** 2
    ) <= 1

def _checkNoduleFits(annotation, dims):
    for axis, center, radius, size in zip(
        'xyz', annotation.center_vox, annotation.radii_vox, dims,
    ):
        if center - radius < 0 or center + radius > size - 1:
            raise ConfigError(
                'nodule exceeds volume along %s: %r +/- %r not in [0, %i]' % (
                    axis, center, radius, size - 1,
                ),
                field='nodule_list',
            )

def generatePhantom(spec):
    """
    Build a thorax phantom volume from a PhantomSpec.
    Background is air (-1000 HU). Returns (Volume, list of NoduleAnnotation)
    where annotations describe exactly the inserted nodules.
    Deterministic for a given spec (including its seed).
    """
    spec = PhantomSpec.fromDict(spec)
    dims = tuple(spec.dims)
    x_size, y_size, z_size = dims
    rng = getRandomGenerator(spec.seed)
    data = numpy.full((z_size, y_size, x_size), HU_AIR, dtype=numpy.int16)
    grid = numpy.ogrid[:z_size, :y_size, :x_size]
    z, y, x = grid
    center = ((x_size - 1) / 2, (y_size - 1) / 2, (z_size - 1) / 2)

    def scaled(fractions):
        return tuple(f * s for f, s in zip(fractions, dims))

    if spec.body:
        data[_ellipsoid(grid, center, scaled(_BODY_RADII))] = spec.soft_tissue_hu
    lung_list = []
    if spec.lungs:
        lung_radii = scaled(_LUNG_RADII)
        for side in (-1, 1):
            lung_center = (
                center[0] + side * _LUNG_OFFSET_X * x_size,
                center[1],
                center[2],
            )
            lung_list.append((lung_center, lung_radii))
            data[_ellipsoid(grid, lung_center, lung_radii)] = spec.lung_hu
    if spec.rib_count:
        rib_a, rib_b = _RIB_RADII[0] * x_size, _RIB_RADII[1] * y_size
        radius = numpy.sqrt(
            ((x - center[0]) / rib_a) ** 2 + ((y - center[1]) / rib_b) ** 2
        )
        # Posterior and lateral arcs only: ribs do not close anteriorly.
        arc = (
            (radius <= 1) & (radius >= 1 - _RIB_THICKNESS) &
            (y >= center[1] - 0.5 * rib_b)
        )
        z_lo, z_hi = (f * (z_size - 1) for f in _RIB_Z_RANGE)
        half_thickness = max(0.5, 0.25 * (z_hi - z_lo) / max(1, spec.rib_count))
        for z_level in numpy.linspace(z_lo, z_hi, spec.rib_count):
            data[arc & (numpy.abs(z - z_level) <= half_thickness)] = spec.bone_hu
    if spec.spine:
        spine_radius = _SPINE_RADIUS * min(x_size, y_size)
        spine_y = center[1] + _SPINE_OFFSET_Y * y_size
        disk = (x - center[0]) ** 2 + (y - spine_y) ** 2 <= spine_radius ** 2
        data[numpy.broadcast_to(disk, data.shape)] = spec.bone_hu
    annotation_list = []
    radius_lo, radius_hi = spec.nodule_radius_range
    for _ in range(spec.nodule_count):
        radius = rng.uniform(radius_lo, radius_hi)
        if lung_list:
            lung_center, lung_radii = lung_list[rng.integers(len(lung_list))]
            # Uniform in the inner half of the lung box.
            offset = rng.uniform(-0.5, 0.5, 3) * numpy.array(lung_radii)
            nodule_center = numpy.array(lung_center) + offset
        else:
            nodule_center = rng.uniform(0.25, 0.75, 3) * (numpy.array(dims) - 1)
        nodule_center = numpy.clip(
            nodule_center,
            radius,
            numpy.array(dims) - 1 - radius,
        )
        annotation_list.append(NoduleAnnotation(
            nodule_center.tolist(),
            (radius, radius, radius),
        ))
    for item in spec.nodule_list:
        if not isinstance(item, NoduleAnnotation):
            item = NoduleAnnotation(item['center_vox'], item['radii_vox'])
        annotation_list.append(item)
    for annotation in annotation_list:
        _checkNoduleFits(annotation, dims)
        data[_ellipsoid(
            grid,
            annotation.center_vox,
            annotation.radii_vox,
        )] = spec.nodule_hu
    return Volume(dims, spec.spacing_mm, data), annotation_list

def boneWindow(vol, lo=BONE_WINDOW[0], hi=BONE_WINDOW[1]):
    """
    Keep voxels with lo <= HU <= hi, set all others to -1024 (lowest HU).
    """
    if lo > hi:
        raise ConfigError('window lower bound %r above upper %r' % (lo, hi), field='lo')
    data = vol.data
    return vol.withData(
        numpy.where((data >= lo) & (data <= hi), data, HU_MIN).astype(numpy.int16),
    )

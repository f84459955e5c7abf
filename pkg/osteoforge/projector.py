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
Digitally reconstructed radiographs by parallel projection along y.

The average attenuation along each ray is
  mu_av(x, z) = sum over y of mu_water * (HU + 1000) / (N * 1000)
with N the number of voxels along y, and the radiograph intensity is
  I(x, z) = exp(beta * mu_av(x, z))
(positive exponent, so bones come out bright).
"""
import logging
import numpy
from .common import (
    Config,
    FormatError,
    HU_AIR,
    checkPositive,
)
# pylint: disable=no-name-in-module
from .common import (
    RANGE_RAW,
    RANGE_BINARY,
)
# pylint: enable=no-name-in-module
from .image import RadiographImage, TrainingPair
from .imageops import minmaxNormalize
from .volume import boneWindow, BONE_WINDOW

__all__ = (
    'ProjectorConfig',
    'attenuationMap',
    'drr',
    'boneDRR',
    'projectNoduleMask',
    'makePair',
)

logger = logging.getLogger(__name__)

class ProjectorConfig(Config):
    """
    mu_water (float, cm^-1)
        Linear attenuation of water.
    beta (float)
        Dimensionless exposure factor.
    clamp_air (bool)
        Clamp (HU + 1000) at 0 so air and anything below contributes exactly
        nothing. When false, the formula is applied verbatim.
    """
    _field_list = (
        ('mu_water', 0.2),
        ('beta', 0.02),
        ('clamp_air', True),
    )

    def validate(self):
        checkPositive(self, 'mu_water')
        checkPositive(self, 'beta')

def attenuationMap(vol, cfg=None):
    """
    Average attenuation map of vol, as a raw image of width X and height Z.
    Accumulated in double precision, in ascending y order.
    """
    cfg = ProjectorConfig.fromDict(cfg)
    data = vol.data
    if data.size == 0:
        raise FormatError('empty volume', field='data')
    depth = data.shape[1]
    shifted = data.astype(numpy.float64) - HU_AIR
    if cfg.clamp_air:
        shifted = numpy.maximum(shifted, 0)
    term = cfg.mu_water * shifted / (depth * 1000.0)
    result = numpy.zeros((data.shape[0], data.shape[2]), dtype=numpy.float64)
    for y in range(depth):
        result += term[:, y, :]
    return RadiographImage(result, RANGE_RAW)

def drr(vol, cfg=None, raw=False):
    """
    Radiograph of vol: exp(beta * mu_av), min-max normalized to [0, 1]
    (a constant image becomes all zeros).

    raw (bool)
        Diagnostic: return the un-normalized intensities instead.
    """
    cfg = ProjectorConfig.fromDict(cfg)
    intensity = numpy.exp(cfg.beta * attenuationMap(vol, cfg).pixels)
    result = RadiographImage(intensity, RANGE_RAW)
    if raw:
        return result
    return minmaxNormalize(result)

def boneDRR(vol, cfg=None, lo=BONE_WINDOW[0], hi=BONE_WINDOW[1], raw=False):
    """
    "Bone X-ray": radiograph of the bone-windowed volume.
    """
    return drr(boneWindow(vol, lo, hi), cfg, raw=raw)

def projectNoduleMask(dims, annotations):
    """
    Binary image of width X and height Z, set where some integer y in
    [0, Y) puts (x, y, z) inside one of the annotated ellipsoids.
    """
    x_size, y_size, z_size = dims
    for annotation in annotations:
        annotation.checkInside(dims)
    result = numpy.zeros((z_size, x_size), dtype=bool)
    x = numpy.arange(x_size, dtype=numpy.float64)
    z = numpy.arange(z_size, dtype=numpy.float64)
    for annotation in annotations:
        (cx, cy, cz), (rx, ry, rz) = annotation.center_vox, annotation.radii_vox
        # The y term is smallest at the integer nearest to cy, one of these.
        dy2 = min(
            ((y - cy) / ry) ** 2
            for y in {
                min(max(int(numpy.floor(cy)), 0), y_size - 1),
                min(max(int(numpy.ceil(cy)), 0), y_size - 1),
            }
        )
        dx2 = ((x - cx) / rx) ** 2
        dz2 = ((z - cz) / rz) ** 2
        result |= (dx2[numpy.newaxis, :] + dy2) + dz2[:, numpy.newaxis] <= 1
    return RadiographImage(result.astype(numpy.float64), RANGE_BINARY)

def makePair(vol, annotations, cfg=None, lo=BONE_WINDOW[0], hi=BONE_WINDOW[1]):
    """
    Build a TrainingPair from a volume: DRR source, bone DRR target and
    projected nodule mask.
    """
    cfg = ProjectorConfig.fromDict(cfg)
    return TrainingPair(
        drr(vol, cfg),
        boneDRR(vol, cfg, lo, hi),
        projectNoduleMask(vol.dims, annotations),
    )

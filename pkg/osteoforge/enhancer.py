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
Bone image prediction on radiographs of any size, and enhancement by
weighted fusion: enhanced = cxr + weight * bone.
"""
import numpy
from .common import (
    Config,
    RangeError,
    ShapeError,
    checkPositive,
)
# pylint: disable=no-name-in-module
from .common import (
    PREPROCESS_STANDARDIZE,
    RANGE_RAW,
    RANGE_UNIT,
)
# pylint: enable=no-name-in-module
from .imageops import minmaxNormalize, resample
from .trainer import predictUnit

__all__ = (
    'FusionConfig',
    'predictBone',
    'fuse',
)

class FusionConfig(Config):
    """
    weight (float)
        Bone image weight.
    clamp (bool)
        Clamp the sum to [0, 1].
    """
    _field_list = (
        ('weight', 0.5),
        ('clamp', True),
    )

    def validate(self):
        checkPositive(self, 'weight', strict=False)

def predictBone(model, cxr, preprocess=PREPROCESS_STANDARDIZE):
    """
    Predicted bone image of cxr, min-max normalized, with cxr's dimensions.
    Images are bilinearly resampled to and from the model input size when
    they differ from it.
    """
    size = model.config.input_size
    bone = minmaxNormalize(predictUnit(
        model,
        resample(cxr, size, size),
        preprocess,
    ))
    return resample(bone, cxr.height, cxr.width)

def fuse(cxr, bone, cfg=None):
    """
    Pixelwise cxr + weight * bone, both unit-range images of equal size.
    """
    cfg = FusionConfig.fromDict(cfg)
    for role, image in (('cxr', cxr), ('bone', bone)):
        if image.range_tag != RANGE_UNIT:
            raise RangeError(
                '%s image must be unit range, got %r' % (role, image.range_tag),
                field=role,
            )
    if cxr.shape != bone.shape:
        raise ShapeError(
            'cxr is %ix%i, bone is %ix%i' % (cxr.shape + bone.shape),
            field='shape',
        )
    result = cxr.pixels + cfg.weight * bone.pixels
    if cfg.clamp:
        result = numpy.clip(result, 0, 1)
        range_tag = RANGE_UNIT
    else:
        range_tag = RANGE_RAW
    return cxr.withPixels(result, range_tag)

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
import numpy
from osteoforge.common import ConfigError, RangeError, ShapeError
from osteoforge.enhancer import FusionConfig, fuse, predictBone
from osteoforge.image import RadiographImage
from osteoforge.quality import msssim
from osteoforge.unet import UNetConfig, build
from .common import (
    PHANTOM_TEST_SET,
    TOY_METRICS,
    getPhantomPairList,
    getTrainedToyModel,
    main,
)

SMALL = UNetConfig(input_size=16, base_filters=4, depth=2)

def _unit(pixels):
    return RadiographImage(pixels, 'unit')

def testFuseZeroWeight():
    rng = numpy.random.default_rng(0)
    cxr = _unit(rng.random((8, 8)))
    assert fuse(cxr, _unit(rng.random((8, 8))), {'weight': 0}) == cxr

def testFuseValues():
    cxr = _unit([[0.5, 0.2]])
    bone = _unit([[1.0, 0.4]])
    assert fuse(cxr, bone).pixels.tolist() == [[1.0, 0.4]]
    assert numpy.allclose(fuse(cxr, bone, {'weight': 0.25}).pixels, [[0.75, 0.3]], rtol=0, atol=1e-15)
    unclamped = fuse(cxr, bone, {'weight': 1, 'clamp': False})
    assert unclamped.range_tag == 'raw'
    assert numpy.allclose(unclamped.pixels, [[1.5, 0.6]], rtol=0, atol=1e-15)

def testFuseProperties():
    rng = numpy.random.default_rng(1)
    for _ in range(1000):
        cxr = _unit(rng.random((4, 4)))
        bone = _unit(rng.random((4, 4)))
        weight = rng.uniform(0, 2)
        result = fuse(cxr, bone, {'weight': weight})
        assert result.range_tag == 'unit'
        assert 0 <= result.pixels.min() and result.pixels.max() <= 1
        # Never darker than the input radiograph.
        assert (result.pixels >= cxr.pixels).all()
        heavier = fuse(cxr, bone, {'weight': weight + 0.5})
        assert (heavier.pixels >= result.pixels).all()

def testFuseErrors():
    cxr = _unit(numpy.zeros((4, 4)))
    for bone, error_class, field in (
        (RadiographImage(numpy.zeros((4, 4))), RangeError, 'bone'),
        (_unit(numpy.zeros((4, 5))), ShapeError, 'shape'),
    ):
        try:
            fuse(cxr, bone)
        except error_class as exc:
            assert exc.field == field, exc.field
        else:
            raise AssertionError('%s accepted' % (field, ))
    try:
        FusionConfig(weight=-1)
    except ConfigError as exc:
        assert exc.field == 'weight'
    else:
        raise AssertionError('negative weight accepted')

def testPredictBone():
    model = build(SMALL)
    rng = numpy.random.default_rng(2)
    cxr = _unit(rng.random((16, 16)))
    bone = predictBone(model, cxr)
    assert bone.range_tag == 'unit'
    assert bone.shape == (16, 16)
    assert bone == predictBone(model, cxr)
    assert bone.pixels.min() == 0 and bone.pixels.max() == 1

def testPredictBoneResamples():
    model = build(SMALL)
    rng = numpy.random.default_rng(3)
    cxr = _unit(rng.random((40, 24)))
    bone = predictBone(model, cxr, preprocess='he_clahe')
    assert bone.shape == (40, 24)
    assert bone.range_tag == 'unit'
    enhanced = fuse(cxr, bone)
    assert enhanced.shape == (40, 24)

def testPredictBoneBeatsSource():
    pair = getPhantomPairList(*PHANTOM_TEST_SET)[0]
    bone = predictBone(getTrainedToyModel('l1'), pair.source)
    assert bone.shape == pair.target.shape
    assert (
        msssim(bone, pair.target, TOY_METRICS) >
        msssim(pair.source, pair.target, TOY_METRICS)
    )

if __name__ == '__main__':
    main(globals())

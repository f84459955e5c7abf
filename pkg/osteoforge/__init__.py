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
Synthetic bone X-ray generation from CT volumes, bone extraction network
training and chest radiograph enhancement.

Volumes (volume) are rendered into digitally reconstructed radiographs
(projector); bone-windowed renderings serve as targets for a U-Net (unet)
trained (trainer) with plain, nodule-weighted or feature-reconstruction
losses (losses) on top of a small automatic differentiation engine
(autodiff). Predicted bone images are fused with the input radiograph
(enhancer) and scored with the usual image quality metrics (quality).
"""
from ._version import __version__
from .common import (
    OsteoForgeError,
    ConfigError,
    FormatError,
    ShapeError,
    RangeError,
    TrainingError,
)
from .volume import (
    Volume,
    NoduleAnnotation,
    PhantomSpec,
    loadVolume,
    saveVolume,
    generatePhantom,
    boneWindow,
)
from .image import (
    RadiographImage,
    TrainingPair,
    loadImage,
    saveImage,
)
from .projector import (
    ProjectorConfig,
    drr,
    boneDRR,
    makePair,
)
from .unet import UNetConfig, build, forward, loadWeights, saveWeights
from .trainer import TrainConfig, train, evaluate
from .enhancer import FusionConfig, predictBone, fuse

__all__ = (
    '__version__',
    'OsteoForgeError',
    'ConfigError',
    'FormatError',
    'ShapeError',
    'RangeError',
    'TrainingError',
    'Volume',
    'NoduleAnnotation',
    'PhantomSpec',
    'loadVolume',
    'saveVolume',
    'generatePhantom',
    'boneWindow',
    'RadiographImage',
    'TrainingPair',
    'loadImage',
    'saveImage',
    'ProjectorConfig',
    'drr',
    'boneDRR',
    'makePair',
    'UNetConfig',
    'build',
    'forward',
    'loadWeights',
    'saveWeights',
    'TrainConfig',
    'train',
    'evaluate',
    'FusionConfig',
    'predictBone',
    'fuse',
)

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
Definitions shared by all modules: named constant sets, configuration base
class, error hierarchy, seeding and worker-count helpers.
"""
import copy
import os
import sys
import numpy

class Enum:
    """
    A set of named constants, also exposed as module-level names in the
    caller's scope.
    """
    def __init__(self, member_dict, scope_dict=None):
        if scope_dict is None:
            # Affect caller's locals, not this module's.
            # pylint: disable=protected-access
            scope_dict = sys._getframe(1).f_locals
            # pylint: enable=protected-access
        forward_dict = {}
        reverse_dict = {}
        for name, value in member_dict.items():
            if value in reverse_dict:
                raise ValueError('Multiple names for value %r: %r, %r' % (
                    value, reverse_dict[value], name
                ))
            forward_dict[name] = value
            reverse_dict[value] = name
            scope_dict[name] = value
        self.forward_dict = forward_dict
        self.reverse_dict = reverse_dict

    def __call__(self, value):
        return self.reverse_dict[value]

    def __contains__(self, value):
        return value in self.reverse_dict

    def values(self):
        """
        Member values, in declaration order.
        """
        return tuple(self.forward_dict.values())

# Pixel value range carried by every RadiographImage.
RANGE = Enum({
    'RANGE_RAW': 'raw',
    'RANGE_UNIT': 'unit',
    'RANGE_STANDARDIZED': 'standardized',
    'RANGE_BINARY': 'binary',
})
# Source preprocessing pipelines.
PREPROCESS = Enum({
    'PREPROCESS_STANDARDIZE': 'standardize',
    'PREPROCESS_HE_CLAHE': 'he_clahe',
    'PREPROCESS_NONE': 'none',
})
# Reconstruction losses.
LOSS = Enum({
    'LOSS_L1': 'l1',
    'LOSS_WEIGHTED_L1': 'weighted_l1',
    'LOSS_PERCEPTUAL': 'perceptual',
})

HU_MIN = -1024
HU_MAX = 3071
HU_AIR = -1000

class OsteoForgeError(Exception):
    """
    Base class for errors raised by this package.

    field (str, None)
        Name of the offending field, tensor or file role.
    """
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field

    def asDict(self):
        """
        Structured representation, as emitted by the command line.
        """
        return {
            'error': type(self).__name__,
            'field': self.field,
            'message': str(self),
        }

class ConfigError(OsteoForgeError, ValueError):
    """
    A configuration value is invalid.
    """

class FormatError(OsteoForgeError, ValueError):
    """
    A file is missing, malformed, or inconsistent with its header.
    """

class ShapeError(OsteoForgeError, ValueError):
    """
    Dimensions, channel counts or tensor shapes do not match.
    """

class RangeError(OsteoForgeError, ValueError):
    """
    Pixel values or range tags violate an operation's precondition.
    """

class TrainingError(OsteoForgeError, RuntimeError):
    """
    Training cannot proceed (non-finite loss, incompatible dataset).
    """

class Config:
    """
    Base class for configuration objects.

    Subclasses declare _field_list, a sequence of (name, default) pairs.
    Instances get one attribute per field; unknown keyword arguments are
    rejected, values are checked by validate().
    """
    _field_list = ()

    def __init__(self, **kw):
        unknown = [x for x in kw if x not in self.getDefaults()]
        if unknown:
            raise TypeError('Unknown fields %r' % (unknown, ))
        for name, default in self._field_list:
            setattr(self, name, copy.deepcopy(kw.get(name, default)))
        self.validate()

    @classmethod
    def getDefaults(cls):
        """
        Return an ordered dict of built-in default values.
        """
        return dict(cls._field_list)

    @classmethod
    def fromDict(cls, value_dict):
        """
        Build an instance from a (possibly partial) dict, as found in config
        files and run manifests.
        """
        if isinstance(value_dict, cls):
            return value_dict
        if value_dict is None:
            return cls()
        return cls(**value_dict)

    def replace(self, **kw):
        """
        Return a copy with given fields changed.
        """
        result = self.asDict()
        result.update(kw)
        return self.fromDict(result)

    def validate(self):
        """
        Raise ConfigError naming the first invalid field.
        May be overridden in subclass.
        """

    def asDict(self):
        """
        All fields, defaults materialized, as JSON-serialisable values.
        """
        result = {}
        for name, _ in self._field_list:
            value = getattr(self, name)
            if isinstance(value, Config):
                value = value.asDict()
            elif isinstance(value, tuple):
                value = list(value)
            result[name] = value
        return result

    def __eq__(self, other):
        return type(self) is type(other) and self.asDict() == other.asDict()

    def __repr__(self):
        return '%s(%s)' % (
            type(self).__name__,
            ', '.join('%s=%r' % x for x in self.asDict().items()),
        )

def checkPositive(config, name, strict=True):
    """
    Raise ConfigError unless config.<name> is positive (non-negative if
    strict is false).
    """
    value = getattr(config, name)
    if value < 0 or (strict and value == 0):
        raise ConfigError(
            '%s must be %s, got %r' % (
                name,
                'positive' if strict else 'non-negative',
                value,
            ),
            field=name,
        )

def checkProbability(config, name):
    """
    Raise ConfigError unless config.<name> is in [0, 1].
    """
    value = getattr(config, name)
    if not 0 <= value <= 1:
        raise ConfigError(
            '%s must be a probability, got %r' % (name, value),
            field=name,
        )

def checkChoice(config, name, enum):
    """
    Raise ConfigError unless config.<name> is a member of enum.
    """
    value = getattr(config, name)
    if value not in enum:
        raise ConfigError(
            '%s must be one of %r, got %r' % (name, enum.values(), value),
            field=name,
        )

def getRandomGenerator(*key):
    """
    Return a numpy Generator whose stream depends only on key, a sequence of
    non-negative integers (seed, step, item index...).
    """
    return numpy.random.default_rng([int(x) for x in key])

def getThreadCount():
    """
    Maximum number of worker threads, from OSTEOFORGE_THREADS if set.
    """
    value = os.environ.get('OSTEOFORGE_THREADS')
    if value:
        try:
            result = int(value)
        except ValueError:
            raise ConfigError(
                'OSTEOFORGE_THREADS must be an integer, got %r' % (value, ),
                field='OSTEOFORGE_THREADS',
            ) from None
        return max(1, result)
    return os.cpu_count() or 1

def splitName(path, suffix):
    """
    Return (directory, base name) of a file path ending in suffix, such as
    ".vol.json". A path without that suffix is taken as the base name.
    """
    directory, name = os.path.split(path)
    if name.endswith(suffix):
        name = name[:-len(suffix)]
    if not name:
        raise FormatError('Empty file name in %r' % (path, ), field='path')
    return directory, name

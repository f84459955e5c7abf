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
Named tensor collections on disk.

Manifest "<name>.wts.json":
  {"tensors": [{"name", "shape", "dtype", "offset", "len"}, ...], ...}
plus a single "<name>.wts.raw" blob. Offsets and lengths are in bytes,
ascending and densely packed. Extra top-level keys carry metadata (model
configuration, loss network input offset/scale).
"""
import json
import os
import numpy
from .common import FormatError, splitName

__all__ = (
    'saveWeightFile',
    'loadWeightFile',
)

MANIFEST_SUFFIX = '.wts.json'
RAW_SUFFIX = '.wts.raw'
_DTYPE_DICT = {
    'f32le': numpy.dtype('<f4'),
    'f64le': numpy.dtype('<f8'),
}
_DTYPE_NAME_DICT = {
    numpy.dtype(numpy.float32): 'f32le',
    numpy.dtype(numpy.float64): 'f64le',
}

def saveWeightFile(path, named_array_list, metadata=None):
    """
    Write arrays in the given order.

    named_array_list (list of (name, array))
        Names must be unique; float32 and float64 arrays are supported.
    metadata (dict, None)
        Extra top-level manifest entries.
    Returns the manifest path.
    """
    directory, name = splitName(path, MANIFEST_SUFFIX)
    raw_name = name + RAW_SUFFIX
    manifest_path = os.path.join(directory, name + MANIFEST_SUFFIX)
    entry_list = []
    seen = set()
    offset = 0
    with open(os.path.join(directory, raw_name), 'wb') as raw_file:
        for tensor_name, array in named_array_list:
            if tensor_name in seen:
                raise FormatError(
                    'Duplicate tensor name %r' % (tensor_name, ),
                    field=tensor_name,
                )
            seen.add(tensor_name)
            array = numpy.asarray(array)
            try:
                dtype_name = _DTYPE_NAME_DICT[array.dtype]
            except KeyError:
                raise FormatError(
                    'Unsupported dtype %s for %r' % (array.dtype, tensor_name),
                    field=tensor_name,
                ) from None
            data = array.astype(_DTYPE_DICT[dtype_name]).tobytes()
            raw_file.write(data)
            entry_list.append({
                'name': tensor_name,
                'shape': list(array.shape),
                'dtype': dtype_name,
                'offset': offset,
                'len': len(data),
            })
            offset += len(data)
    manifest = dict(metadata or {})
    manifest['data'] = raw_name
    manifest['tensors'] = entry_list
    with open(manifest_path, 'w', encoding='utf-8') as manifest_file:
        json.dump(manifest, manifest_file, indent=1)
        manifest_file.write('\n')
    return manifest_path

def loadWeightFile(path):
    """
    Read a manifest and its blob.
    Returns (list of (name, array), manifest dict).
    """
    try:
        with open(path, encoding='utf-8') as manifest_file:
            manifest = json.load(manifest_file)
    except FileNotFoundError:
        raise FormatError('No such file: %r' % (path, ), field='manifest') from None
    except ValueError as exc:
        raise FormatError(
            'Malformed manifest %r: %s' % (path, exc),
            field='manifest',
        ) from None
    if not isinstance(manifest, dict) or not isinstance(manifest.get('tensors'), list):
        raise FormatError('Manifest lacks a tensor list', field='tensors')
    directory, name = splitName(path, MANIFEST_SUFFIX)
    raw_path = os.path.join(directory, manifest.get('data', name + RAW_SUFFIX))
    try:
        with open(raw_path, 'rb') as raw_file:
            blob = raw_file.read()
    except FileNotFoundError:
        raise FormatError('No such file: %r' % (raw_path, ), field='data') from None
    result = []
    expected_offset = 0
    for entry in manifest['tensors']:
        tensor_name = entry.get('name')
        try:
            dtype = _DTYPE_DICT[entry['dtype']]
            shape = tuple(int(x) for x in entry['shape'])
            offset = int(entry['offset'])
            length = int(entry['len'])
        except (KeyError, TypeError, ValueError):
            raise FormatError(
                'Malformed manifest entry %r' % (entry, ),
                field=tensor_name,
            ) from None
        if offset != expected_offset or length != int(numpy.prod(shape)) * dtype.itemsize:
            raise FormatError(
                'Tensor %r is not densely packed' % (tensor_name, ),
                field=tensor_name,
            )
        if offset + length > len(blob):
            raise FormatError(
                'Tensor %r extends past the end of %r' % (tensor_name, raw_path),
                field=tensor_name,
            )
        expected_offset = offset + length
        result.append((
            tensor_name,
            numpy.frombuffer(blob, dtype=dtype, count=length // dtype.itemsize, offset=offset).reshape(shape).astype(dtype.newbyteorder('=')),
        ))
    if expected_offset != len(blob):
        raise FormatError('Trailing data in %r' % (raw_path, ), field='data')
    return result, manifest

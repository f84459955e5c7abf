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
from setuptools import setup
from codecs import open
import os
import re

base_path = os.path.dirname(__file__)
long_description = open(
    os.path.join(base_path, 'README.rst'),
    encoding='utf8',
).read()
with open(os.path.join(base_path, 'osteoforge', '_version.py'), encoding='utf8') as version_file:
    version = re.search(
        r"^__version__ = '([^']+)'$",
        version_file.read(),
        re.MULTILINE,
    ).group(1)

setup(
    name='osteoforge',
    description=next(x for x in long_description.splitlines() if x.strip()),
    long_description='.. contents::\n\n' + long_description,
    long_description_content_type='text/x-rst',
    keywords='radiograph drr bone suppression enhancement u-net ssim',
    version=version,
    license='GPLv3+',
    packages=['osteoforge', 'osteoforge.tests'],
    python_requires='>=3.7',
    install_requires=[
        'numpy>=1.20',
        'scipy',
    ],
    tests_require=[
        'pytest',
    ],
    entry_points={
        'console_scripts': [
            'osteoforge=osteoforge.cli:main',
        ],
    },
    classifiers=[
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: GNU General Public License v3 or later (GPLv3+)',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: Implementation :: CPython',
        'Topic :: Scientific/Engineering :: Medical Science Apps.',
        'Topic :: Scientific/Engineering :: Image Processing',
    ],
)

#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""The setup script."""

from setuptools import setup, find_packages
import os

with open('README.md') as readme_file:
    readme = readme_file.read()

with open('HISTORY.md') as history_file:
    history = history_file.read()

requirements = [
    'numpy>=1.22',
    'scipy>=1.8',
    'Pillow>=9.0',
    'ruamel.yaml>=0.17.21',
    'jsonschema',
    'click',
    'progress'
]

setup_requirements = [
    'pytest-runner',
]

test_requirements = [
    'pytest',
]

here = os.path.abspath(os.path.dirname(__file__))
about = {}
with open(os.path.join(here, 'ouiqa', '__version__.py'), 'r') as f:
    exec(f.read(), about)

setup(
    name='ouiqa',
    version=about['__version__'],
    description="Train and evaluate opinion-unaware image quality scorers from synthetic distortions",
    long_description=readme + '\n\n' + history,
    long_description_content_type="text/markdown; charset=UTF-8; variant=GFM",
    author="ouiqa developers",
    packages=find_packages(include=['ouiqa']),
    package_data={'ouiqa': ['*.yaml']},
    include_package_data=True,
    install_requires=requirements,
    license="MIT license",
    zip_safe=False,
    keywords='ouiqa image-quality-assessment',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Natural Language :: English',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
    ],
    python_requires='>=3.8',
    test_suite='tests',
    tests_require=test_requirements,
    setup_requires=setup_requirements,
    entry_points='''
        [console_scripts]
        ouiqa=ouiqa.cli:cli
    '''
)

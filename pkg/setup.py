#!/usr/bin/env python

from setuptools import setup, find_packages

########## dependencies ##########

install_requires = [
    'numpy >=1.17',
    'param >=1.12',
    'scipy >=1.4',
]

extras_require = {
    'tests': ['pytest'],
}

setup_args = dict(
    name='drconv',
    version="0.1.0",
    description='Dynamic region-aware convolution: reference operator, gradient oracles and a desk-scale trainer.',
    platforms=['Windows', 'Mac OS X', 'Linux'],
    license='BSD',
    packages=find_packages(exclude=['tests']),
    include_package_data=True,
    classifiers=[
        "License :: OSI Approved :: BSD License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Operating System :: OS Independent",
        "Intended Audience :: Developers",
        "Intended Audience :: Science/Research",
        "Natural Language :: English",
        "Topic :: Scientific/Engineering",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Software Development :: Libraries"],
    python_requires=">=3.8",
    install_requires=install_requires,
    extras_require=extras_require,
    entry_points={
        'console_scripts': ['drconv = drconv.cli:main'],
    },
)

setup(**setup_args)

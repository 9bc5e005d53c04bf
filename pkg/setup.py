#!/usr/bin/env python3
from pathlib import Path
from setuptools import setup, find_namespace_packages

# The directory containing this file
HERE = Path(__file__).parent

# Load version without importing it (importing would pull in every runtime dependency)
for l in (HERE / 'r2if_kit' / '__version__.py').read_text().strip().splitlines():
    exec(l)

# The text of the README file
README = (HERE / "README.md").read_text('utf-8')

# This call to setup() does all the work
setup(
    name="r2if-kit",
    version=VERSION,
    description="Composite rewards, GRPO math and evaluation for tool-calling reasoning",
    long_description=README,
    long_description_content_type="text/markdown",
    license="MIT",
    classifiers=[
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
    python_requires=">=3.10",
    packages=find_namespace_packages(exclude=("tests", "tests.*", "examples", "examples.*")),
    include_package_data=True,
    install_requires=[
        # Universal dependencies
        'setuptools', 'tomli ; python_version < "3.11"',
        'hypy_utils', 'regex', 'numpy', 'scipy',

        # Backends and scoring service
        'openai>=1.0', 'fastapi', 'uvicorn', 'pydantic>=2',

        # Windows dependencies
        'colorama>=0.4.6 ; platform_system=="Windows"',
    ],
    extras_require={
        'test': ['pytest', 'httpx'],
    },
    entry_points={
        "console_scripts": [
            "r2if-kit=r2if_kit.main:run",
        ]
    },
)

#!/usr/bin/env python
"""
Package metadata for flowmap.
"""
import os
import re

from setuptools import find_packages, setup

HERE = os.path.dirname(__file__)
REQUIREMENT_LINE = re.compile(r"([a-zA-Z0-9\-_.]+(?:\[[a-zA-Z0-9\-_.,\s]+\])?)([<>=!~][^#\s]*)?")


def get_version(*file_paths):
    """
    Extract the version string from the file.
    """
    with open(os.path.join(HERE, *file_paths)) as version_file:
        version_match = re.search(r"^__version__ = ['\"]([^'\"]*)['\"]", version_file.read(), re.M)
    if version_match:
        return version_match.group(1)
    raise RuntimeError("Unable to find version string.")


def is_requirement(line):
    """
    Return True if the line names a package (not blank, a comment, an include or a URL).
    """
    return line and line.strip() and not line.startswith(("-r", "#", "-e", "git+", "-c"))


def load_requirements(*requirements_paths):
    """
    Load requirements from .in files, applying the constraints of any local ``-c`` file they include.

    Returns a sorted list of requirement strings.
    """
    requirements, constraint_files = {}, set()

    for path in requirements_paths:
        with open(os.path.join(HERE, path)) as reqs:
            for line in reqs:
                if is_requirement(line):
                    match = REQUIREMENT_LINE.match(line.strip())
                    if match:
                        requirements[match.group(1)] = match.group(2)
                elif line.startswith("-c") and not line.startswith("-c http"):
                    constraint_files.add(os.path.join(os.path.dirname(path), line.split("#")[0][2:].strip()))

    for constraint_file in constraint_files:
        with open(os.path.join(HERE, constraint_file)) as reader:
            for line in reader:
                if is_requirement(line):
                    match = REQUIREMENT_LINE.match(line.strip())
                    if match and match.group(1) in requirements:
                        if requirements[match.group(1)] and requirements[match.group(1)] != match.group(2):
                            raise ValueError(f"Multiple constraint definitions found for {match.group(1)}")
                        requirements[match.group(1)] = match.group(2)

    return [f"{package}{version or ''}" for package, version in sorted(requirements.items())]


VERSION = get_version("flowmap", "__init__.py")

with open(os.path.join(HERE, "README.rst")) as readme:
    README = readme.read()
with open(os.path.join(HERE, "CHANGELOG.rst")) as changelog:
    CHANGELOG = changelog.read()

setup(
    name="flowmap",
    version=VERSION,
    description="Dense water flow intensity prediction for catchment areas from sparse gauge supervision.",
    long_description=README + "\n\n" + CHANGELOG,
    long_description_content_type="text/x-rst",
    packages=find_packages(exclude=["test_utils", "test_utils.*"]),
    package_data={"flowmap": ["profiles/*.json", "splits/*.json"]},
    include_package_data=True,
    install_requires=load_requirements("requirements/base.in"),
    entry_points={
        "console_scripts": [
            "flowmap = flowmap.cli:main",
        ],
    },
    python_requires=">=3.10",
    license="AGPL 3.0",
    zip_safe=False,
    keywords="Python hydrology flow-prediction fully-convolutional",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: GNU Affero General Public License v3 or later (AGPLv3+)",
        "Natural Language :: English",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Hydrology",
    ],
)

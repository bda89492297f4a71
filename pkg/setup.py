"""setuptools module for distillkit."""

from setuptools import find_namespace_packages, setup

extras_require = {
    "dev": [
        "black",
        "pytest",
        "pylint",
        "mypy",
        "pydocstyle",
        "flake8",
        "isort",
        "sphinx",
        "twine",
        "setuptools",
        "bump2version",
    ]
}

with open("README.md", "r") as file_handle:
    README_MD = file_handle.read()

setup(
    name="distillkit",
    # *IMPORTANT*: Don't manually change the version here. Use the 'bumpversion' utility.
    version="0.1.0",
    description="""Dataset distillation toolkit""",
    long_description=README_MD,
    long_description_content_type="text/markdown",
    include_package_data=True,
    install_requires=[
        "base58>=2.0.1, <3.0.0",
        "construct>=2.10.56, <3.0.0",
        "numpy>=1.19, <2.0",
        "requests>=2.24.0, <3.0.0",
        "torch>=1.10, <3.0",
        "typing_extensions",
    ],
    extras_require=extras_require,
    entry_points={"console_scripts": ["distillkit=distillkit.cli:main"]},
    python_requires=">=3.8, <4",
    keywords="dataset distillation condensation synthetic data",
    license="MIT",
    package_data={"distillkit": ["py.typed"]},
    packages=find_namespace_packages(exclude=["tests", "tests.*", "docs", "docs.*", "examples", "examples.*"]),
    zip_safe=False,  # required per mypy
    classifiers=[
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Natural Language :: English",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
    ],
)

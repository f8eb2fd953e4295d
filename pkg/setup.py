"""Build script for the optional compiled routing kernel.

The package works without it (a pure-Python kernel is selected at import
time); building the extension just makes the per-event update path faster.

    python setup.py build_ext --inplace
"""

from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/aqptree/kernels/_kernels.pyx"],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)

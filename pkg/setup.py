"""Build the optional compiled kernels.

The package works without them; ``lesionbench._kernels`` falls back to the
numpy/scipy implementation when the extension is missing.
"""
import os

import numpy
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("LESIONBENCH_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "lesionbench._ccl",
                    ["src/lesionbench/_ccl.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                    language="c++",
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)

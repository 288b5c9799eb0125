"""Build script for the optional compiled convolution kernels.

The package works without the extension (a NumPy fallback is selected at
import time); building it just makes the hot conv2d loops faster.
"""

import numpy as np
from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/tankdef/nn/_convkernels.pyx"],
        compiler_directives={"language_level": "3"},
    )
    for ext in ext_modules:
        # Vectorize the elementwise optimizer loop (sqrt-heavy).
        ext.extra_compile_args = ["-O3", "-ffast-math"]
except ImportError:
    ext_modules = []

setup(
    ext_modules=ext_modules,
    include_dirs=[np.get_include()],
)

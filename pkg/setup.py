"""Builds the optional compiled kernels; the package falls back to numpy without them."""
import numpy as np
from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("gnntrack._ckernels", ["src/gnntrack/_ckernels.pyx"],
                   include_dirs=[np.get_include()],
                   define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
        compiler_directives={"language_level": 3},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)

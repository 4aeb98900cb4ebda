"""Build the optional Cython kernels.

If Cython or a C compiler is missing the package still installs and
``voxlow.kernels`` falls back to the numpy implementation.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("VOXLOW_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "voxlow._ckernels",
                    ["src/voxlow/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)

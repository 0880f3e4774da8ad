from setuptools import Extension, setup

import numpy as np

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext = Extension(
        "itevar._kernels._core",
        ["src/itevar/_kernels/_core.pyx"],
        language="c++",
        include_dirs=[np.get_include()],
        # -ffp-contract=off keeps float results bit-identical to the pure
        # NumPy backend (no FMA contraction in the split-scan arithmetic).
        extra_compile_args=["-O3", "-std=c++17", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)

"""Builds the optional Cython kernel extension.

The package works without it (numpy fallback is selected at import time);
the extension just makes the hot training kernels faster. Skips the
extension entirely when Cython or a C compiler is unavailable.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "flowsig._ckernels",
                ["src/flowsig/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)

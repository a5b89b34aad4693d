"""Build script: compiles the optional fast-kernel extension.

The package works without the extension (pure-numpy fallback is selected at
import time); a missing compiler or Cython only costs speed.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "cfdetox.kernels._fast",
                ["src/cfdetox/kernels/_fast.pyx"],
                include_dirs=[numpy.get_include()],
                # no FP contraction: the compiled kernels must produce the
                # same bits as the numpy fallback
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)

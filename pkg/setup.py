import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "pneumoxai.kernels._convext",
                ["src/pneumoxai/kernels/_convext.pyx"],
                extra_compile_args=["-O3"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython available: the package falls back to the numpy kernels.
    ext_modules = []

setup(ext_modules=ext_modules)

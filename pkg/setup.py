import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    HAVE_CYTHON = True
except ImportError:
    HAVE_CYTHON = False

ext_modules = []
if HAVE_CYTHON and not os.environ.get("BOLTZHYDRO_PURE"):
    ext_modules = cythonize(
        [
            Extension(
                "boltzhydro._corekern",
                ["src/boltzhydro/_corekern.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-fopenmp", "-march=native", "-fno-math-errno"],
                extra_link_args=["-fopenmp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)

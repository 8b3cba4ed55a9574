import os
import sys

import numpy as np
from setuptools import Extension, setup

openmp = [] if sys.platform == "darwin" else ["-fopenmp"]

ext_modules = []
if os.environ.get("PLR_NO_EXTENSION") != "1":
    from Cython.Build import cythonize

    extensions = [
        Extension(
            "polylr._kernels",
            ["src/polylr/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"] + openmp,
            extra_link_args=openmp,
        )
    ]
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)

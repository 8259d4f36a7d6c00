# Builds the optional compiled kernels. When Cython or a C compiler is missing
# the package still installs and runs on the numpy fallback.
#
#   python3 setup.py build_ext --inplace
#
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DESVQ_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "desvq._ext",
                    ["src/desvq/_ext.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)

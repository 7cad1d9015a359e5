"""Build script: compiles the optional Cython kernel extension.

Set SATFP_PURE_PYTHON=1 to skip the extension entirely; the package then
runs on the NumPy kernel backend.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SATFP_PURE_PYTHON") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "satfp.kernels._cykernels",
                    ["src/satfp/kernels/_cykernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=[
                        "-O3",
                        "-march=native",
                        "-mtune=native",
                        "-funroll-loops",
                        "-ffast-math",
                    ],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level="3",
        )

setup(ext_modules=ext_modules)

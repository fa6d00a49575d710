import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ROLER_LAB_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:  # fallback kernels are used at import time
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "roler_lab.kernels._core",
                    ["src/roler_lab/kernels/_core.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)

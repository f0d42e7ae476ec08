"""Build script: compiles the optional nearest-centroid kernel.

The compiled extension is a pure speedup; if Cython or a C compiler is
unavailable the install proceeds and partkit.kernels falls back to the
numpy implementation at import time.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "partkit.kernels._nearest",
                ["src/partkit/kernels/_nearest.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fopenmp"],
                extra_link_args=["-fopenmp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    sys.stderr.write(f"partkit: skipping compiled kernels ({exc})\n")

setup(ext_modules=ext_modules)

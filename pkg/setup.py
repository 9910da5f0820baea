"""Build script for the optional compiled ADMM core.

The package works without the extension (a pure-NumPy iteration loop is
selected at import time); the extension exists because the ADMM inner loop
dominates the Monte-Carlo workload.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "dsmpc.solver._core",
                ["src/dsmpc/solver/_core.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
    )
except ImportError:
    # No Cython at build time: install pure-Python, the runtime falls back.
    extensions = []

setup(ext_modules=extensions)

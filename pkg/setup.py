import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("EPISODIC_SARSA_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "episodic_sarsa._kernels._core",
                ["src/episodic_sarsa/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                # no FMA contraction: results must match the pure-Python kernels bit for bit
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)

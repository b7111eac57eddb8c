"""Build script for the optional compiled kernels.

The package works without the extension (a pure NumPy fallback is selected
at import time), but the compiled filter/smoother passes are what make long
estimation runs fast.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:  # source-only install without build deps
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "feeflow._kernels",
                ["src/feeflow/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)

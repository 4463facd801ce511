"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension: `multiplane.kernels`
falls back to NumPy reference implementations at import time. Building the
extension speeds up the warping and convolution packing inner loops, which
dominate training runtime.
"""

import sys

from setuptools import Extension, setup


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError as exc:
        print(f"multiplane: skipping compiled kernels ({exc})", file=sys.stderr)
        return []
    ext = Extension(
        "multiplane.kernels._native",
        ["src/multiplane/kernels/_native.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())

"""Build script; compiles the optional Cython render kernel.

The package works without the extension (a numpy fallback is selected at
import time), so any build failure here degrades to the pure-Python path
instead of breaking the install.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize
    import numpy as np

    ext = Extension(
        "sonoplant._render_kernel",
        ["src/sonoplant/_render_kernel.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)
except Exception as exc:  # pragma: no cover - build-env dependent
    print(f"sonoplant: skipping Cython kernel build ({exc!r}); "
          "pure-Python kernels will be used")

setup(ext_modules=ext_modules)

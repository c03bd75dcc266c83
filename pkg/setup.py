"""Build script: compiles the optional native kernels.

Set UNWARP_SKIP_NATIVE=1 to install without the compiled extension; the
package then falls back to the pure-numpy kernels at import time.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("UNWARP_SKIP_NATIVE"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext = Extension(
            "unwarp.kernels._native",
            sources=["src/unwarp/kernels/_native.pyx"],
            # -ffp-contract=off keeps float results bit-identical to the
            # numpy fallback (no fused multiply-add contraction).
            extra_compile_args=["-O3", "-ffp-contract=off"],
        )
        ext_modules = cythonize([ext], language_level="3")
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)

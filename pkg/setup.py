"""Build script for the optional compiled kernel extension.

The package works without the extension (a pure-Python fallback is selected
at import time); building it just makes the dense kernels fast. Set
LORANK_SKIP_EXT=1 to skip the compilation entirely.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("LORANK_SKIP_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext = Extension(
            "lorank._kernels",
            ["src/lorank/_kernels.pyx"],
            # -ffp-contract=off keeps results bit-identical to the pure
            # Python fallback (no FMA contraction).
            extra_compile_args=["-O3", "-ffp-contract=off"],
            optional=True,
        )
        ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)

"""Build script.

The compiled kernel module is optional: when Cython or a C compiler is
unavailable the package installs anyway and falls back to the pure
NumPy kernels at import time.
"""

import os

from setuptools import setup
from setuptools.errors import CCompilerError, ExecError, PlatformError

PYX = "src/rmstmediate/_core_cy.pyx"

ext_modules = []
cmdclass = {}

if os.path.exists(PYX) and not os.environ.get("RMSTMEDIATE_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
        from setuptools.command.build_ext import build_ext

        class OptionalBuildExt(build_ext):
            """Swallow compiler failures so the pure backend still installs."""

            def run(self):
                try:
                    build_ext.run(self)
                except (CCompilerError, ExecError, PlatformError, OSError):
                    pass

            def build_extension(self, ext):
                try:
                    build_ext.build_extension(self, ext)
                except (CCompilerError, ExecError, PlatformError, OSError):
                    pass

        ext_modules = cythonize(
            [
                Extension(
                    "rmstmediate._core_cy",
                    sources=[PYX],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
        cmdclass["build_ext"] = OptionalBuildExt
    except ImportError:
        pass

setup(ext_modules=ext_modules, cmdclass=cmdclass)

"""Build script for the compiled CSR kernels.

The extension is optional: if Cython or a C compiler is unavailable the
package installs anyway and falls back to the pure-Python kernels at import
time (see sehgnn.sparse). Set SEHGNN_SKIP_EXT=1 to skip the extension build
explicitly.
"""

import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            sys.stderr.write(f"warning: building compiled kernels failed ({exc}); "
                             "installing with pure-Python kernels only\n")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            sys.stderr.write(f"warning: {ext.name} failed to compile ({exc}); "
                             "the pure-Python fallback will be used\n")


ext_modules = []
cmdclass = {}
if not os.environ.get("SEHGNN_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        # -ffp-contract=off keeps a*b+c as separate multiply/add so the
        # compiled kernels are bitwise identical to the numpy fallback.
        ext_modules = cythonize(
            [
                Extension(
                    "sehgnn._kernels",
                    sources=["src/sehgnn/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
        cmdclass = {"build_ext": optional_build_ext}
    except ImportError as exc:
        sys.stderr.write(f"warning: {exc}; installing with pure-Python kernels only\n")

setup(ext_modules=ext_modules, cmdclass=cmdclass)

import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    if not os.path.exists("src/ot3d/_kernel.pyx"):
        raise ImportError("_kernel.pyx not present")
    if sys.platform == "win32":
        # MSVC does not contract by default and /fp:precise is on.
        compile_args = ["/O2"]
    else:
        # No contraction: the compiled kernel must round exactly like
        # the pure backend, FMA would change the low bits.
        compile_args = ["-O3", "-ffp-contract=off"]
    ext_modules = cythonize(
        [
            Extension(
                "ot3d._kernel",
                sources=["src/ot3d/_kernel.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=compile_args,
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []


class optional_build_ext(build_ext):
    """Build the compiled kernel when possible, fall back to pure Python."""

    def run(self):
        try:
            super().run()
        except Exception as exc:
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            f"warning: compiled kernel build failed ({exc}); "
            "ot3d will use the pure-Python kernel",
            file=sys.stderr,
        )


setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})

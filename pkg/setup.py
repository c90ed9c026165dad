"""Builds the optional fixed-order matmul extension.

A compiler failure is not fatal: the package then runs on its NumPy fallback.
"""

import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using NumPy fallback", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: {ext.name} failed to build ({exc})", file=sys.stderr)


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    # contraction off keeps products bitwise equal to the NumPy fallback
    flags = ["-O3", "-ffp-contract=off"]
    if not os.environ.get("CONCEPTINC_PORTABLE"):
        flags.append("-march=native")
    ext = Extension(
        "conceptinc.numkit._kernels",
        ["src/conceptinc/numkit/_kernels.pyx"],
        include_dirs=["src/conceptinc/numkit"],
        extra_compile_args=flags,
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})

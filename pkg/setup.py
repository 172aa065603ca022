"""Build the optional compiled kernel module.

The package works without it (a numpy fallback is selected at import), so a
failed compile only costs speed.
"""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback")


def _extensions():
    if os.environ.get("PCCLEAN_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []

    extensions = [
        Extension(
            "pcclean._kernels",
            ["src/pcclean/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            # no -ffast-math / -march=native: results must match the numpy
            # fallback bit for bit, so no FMA contraction or reassociation
            extra_compile_args=["-O3", "-ffp-contract=off"],
        )
    ]
    compiler_directives = {
        "language_level": 3,
        "boundscheck": False,
        "wraparound": False,
        "cdivision": True,
        "nonecheck": False,
        "initializedcheck": False,
    }
    return cythonize(extensions, compiler_directives=compiler_directives)


setup(ext_modules=_extensions(), cmdclass={"build_ext": OptionalBuildExt})

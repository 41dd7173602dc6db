"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import), so build failures are downgraded to a warning rather than aborting
the install.
"""

import warnings

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            warnings.warn(f"skipping compiled kernels ({exc}); "
                          "falling back to the numpy backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"skipping {ext.name} ({exc}); "
                          "falling back to the numpy backend")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        warnings.warn("Cython not available; compiled kernels skipped")
        return []
    from setuptools import Extension

    ext = Extension(
        "cfoutage.kernels._fast",
        sources=["src/cfoutage/kernels/_fast.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)

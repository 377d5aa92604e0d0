"""Build the optional compiled kernels.

The package works without them (a pure-Python backend is selected at import
time), so a failed extension build only costs speed, not functionality.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible; fall back to pure Python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or cython missing
            sys.stderr.write(
                "warning: compiled kernels not built (%s); "
                "using the pure-Python backend\n" % exc
            )

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            sys.stderr.write(
                "warning: failed to compile %s (%s); "
                "using the pure-Python backend\n" % (ext.name, exc)
            )


def make_extensions():
    import os

    if not os.path.exists("src/stratsample/_core.pyx"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    rand_lib = os.path.join(os.path.dirname(numpy.random.__file__), "lib")
    ext = Extension(
        "stratsample._core",
        ["src/stratsample/_core.pyx"],
        include_dirs=[numpy.get_include()],
        library_dirs=[rand_lib],
        libraries=["npyrandom"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )


setup(ext_modules=make_extensions(), cmdclass={"build_ext": OptionalBuildExt})

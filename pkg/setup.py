"""Build script: compiles the optional Cython kernel extension.

If Cython or a C compiler is unavailable the package still installs and
falls back to the pure-numpy kernels in ``specguard._kernels.pyfallback``.
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the Cython extension if possible, otherwise skip it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"warning: skipping Cython kernels ({exc}); "
                  "pure-python fallback will be used")

    def build_extensions(self):
        try:
            super().build_extensions()
        except Exception as exc:
            print(f"warning: skipping Cython kernels ({exc}); "
                  "pure-python fallback will be used")


def make_extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "specguard._kernels._cykernels",
        ["src/specguard/_kernels/_cykernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(
    ext_modules=make_extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)

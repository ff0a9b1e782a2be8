import sys

from setuptools import setup

# The compiled patch gather/scatter kernels are an optimization, not a
# requirement: if Cython or a C compiler is unavailable the package installs
# pure-Python and lgest.kernels falls back to the numpy implementation.
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "lgest.kernels._convkern",
                ["src/lgest/kernels/_convkern.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except Exception as exc:  # pragma: no cover - depends on build host
    print("lgest: building without compiled kernels (%s)" % exc, file=sys.stderr)
    ext_modules = []

setup(ext_modules=ext_modules)

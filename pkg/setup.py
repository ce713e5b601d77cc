"""Build script: compiles the transport kernel extension when Cython is available.

The package is fully functional without the extension; wpgd.transport falls
back to the numpy reference kernels at import time.
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "wpgd.transport._speedups",
                ["src/wpgd/transport/_speedups.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)

"""Build the optional compiled hash-scan kernel.

The extension links against OpenSSL's libcrypto for SHA-256. It is marked
optional: if the toolchain or libcrypto is unavailable the install still
succeeds and the package falls back to the pure-Python kernel at import.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "metachain._kernels._speedups",
                ["src/metachain/_kernels/_speedups.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)

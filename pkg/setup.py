import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("AVAILORACLE_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "availoracle._ext._powscan",
                    ["src/availoracle/_ext/_powscan.pyx"],
                    libraries=["crypto"],
                    define_macros=[("OPENSSL_SUPPRESS_DEPRECATED", "1")],
                )
            ],
            language_level=3,
        )

setup(ext_modules=ext_modules)

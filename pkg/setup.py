"""Build the optional Cython projector core.

The package works without it: ``osdm.projector`` falls back to a vectorized
NumPy implementation when the extension cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("OSDM_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "osdm._siddon",
                    ["src/osdm/_siddon.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)

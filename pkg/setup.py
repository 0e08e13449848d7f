"""Build script for the optional compiled sampler core.

The package is fully functional without the extension (a numpy fallback is
selected at import time); the extension is only a speedup for the Gibbs
sweep hot loop.  Build failures therefore degrade to a pure-Python install
instead of aborting.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


def _extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "sifgrid._sampler_cy",
        ["src/sifgrid/_sampler_cy.pyx"],
        include_dirs=[np.get_include()],
        library_dirs=[os.path.join(os.path.dirname(np.random.__file__), "lib")],
        libraries=["npyrandom"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


class optional_build_ext(build_ext):
    """Swallow compiler failures; the numpy kernels remain available."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing or broken toolchain
            print(f"WARNING: compiled sampler core not built ({exc}); "
                  "falling back to the pure-Python kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"WARNING: failed to build {ext.name} ({exc}); "
                  "falling back to the pure-Python kernels")


setup(ext_modules=_extensions(), cmdclass={"build_ext": optional_build_ext})

"""Build the optional compiled kernel.

The package works without it; ``consensuslab.backend`` reports which
implementation was loaded.  Set ``CONSENSUSLAB_NO_EXT=1`` to skip the build.
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext

ext_modules = []
if not os.environ.get("CONSENSUSLAB_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension(
                "consensuslab._kernels",
                ["src/consensuslab/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )],
            compiler_directives={"language_level": "3"},
        )


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing: fall back to numpy kernels
            print(f"warning: compiled kernel not built ({exc}); using the numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); using the numpy fallback")


setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})

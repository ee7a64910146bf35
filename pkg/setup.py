"""Builds the compiled learner kernels.

The extension is optional at runtime: agbmap.learners falls back to the
pure-numpy kernels when the module is absent. -ffp-contract=off is required,
not an optimization knob: the compiled and numpy kernels must round floats
identically for the two backends to produce bit-identical models.
"""
from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "agbmap.learners._core",
                ["src/agbmap/learners/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("S2R_SKIP_EXT"):
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "syn2real.autodiff.kernels._convkernels",
                ["src/syn2real/autodiff/kernels/_convkernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # no -ffast-math: kernels must keep IEEE semantics so results
                # stay bit-reproducible and gradient checks are meaningful
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)

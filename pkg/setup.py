import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("XLAB_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "xlab.tensor._ckernels",
                    ["src/xlab/tensor/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3", "-ffast-math", "-march=native"],
                    extra_link_args=["-lmvec", "-lm"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)

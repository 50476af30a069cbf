import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# No -ffast-math: the kernels rely on strict IEEE semantics (exact zeros out of
# softmax for masked positions, reproducible accumulation order).
extensions = [
    Extension(
        "trisent._kernels._fast",
        ["src/trisent/_kernels/_fast.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "pchaos._ckernels",
        ["src/pchaos/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        # no FMA contraction: keeps results bit-identical to the Python loops
        extra_compile_args=["-O2", "-ffp-contract=off"],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))

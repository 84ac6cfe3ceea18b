import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off keeps the compiled scan bit-identical to the numpy
# fallback (no fused multiply-adds reordering the IEEE arithmetic).
extensions = [
    Extension(
        "latkd._kernels._split_cy",
        ["src/latkd/_kernels/_split_cy.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))

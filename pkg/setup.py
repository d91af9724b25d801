import numpy
from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/d2ae/kernels/_conv_cy.pyx",
        compiler_directives={"language_level": 3},
    )
except ImportError:
    # Pure-python kernel backend still works without the extension.
    ext_modules = []

setup(
    ext_modules=ext_modules,
    include_dirs=[numpy.get_include()],
)

import os

from setuptools import setup

ext_modules = []
if os.environ.get("HYBRIDMIMIC_PURE_PYTHON") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("hybridmimic.sim._kernel", ["src/hybridmimic/sim/_kernel.pyx"],
                       include_dirs=[numpy.get_include()], extra_compile_args=["-O3"],
                       define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
            compiler_directives={"language_level": 3},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)

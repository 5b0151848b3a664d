from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-python install; the numpy kernel is used
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("obdistill.cart._scan_ext", ["src/obdistill/cart/_scan_ext.pyx"])],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)

import os

from setuptools import Extension, setup


def extensions():
    if os.environ.get("COHERENTFLOW_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "coherentflow._kernels",
        ["src/coherentflow/_kernels.pyx"],
        extra_compile_args=["-O3", "-fopenmp"],
        extra_link_args=["-fopenmp"],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=extensions())

"""Builds the optional compiled assignment solver.

If Cython or a C compiler is unavailable the package still installs and
falls back to the pure-Python solver at import time.
"""
import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("ufaformer._lsa", ["src/ufaformer/_lsa.pyx"], include_dirs=[np.get_include()],
                   extra_compile_args=["-O3"], optional=True)],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # noqa: BLE001
    print(f"warning: building without the compiled solver ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)

"""Build the optional compiled kernels; the package works without them."""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("KVTIER_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("kvtier._ckernels", ["src/kvtier/_ckernels.pyx"], include_dirs=[np.get_include()])],
            language_level=3,
        )

setup(ext_modules=ext_modules)

import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("TRIATTN_NO_EXT") != "1":
    from Cython.Build import cythonize

    # the extension is built on the machine that runs it; TRIATTN_PORTABLE=1
    # drops the host-specific vector width
    base_args = ["-O3"]
    if os.environ.get("TRIATTN_PORTABLE") != "1":
        base_args.append("-march=native")

    def ext(name, *extra):
        return Extension(
            f"triattn.kernels.{name}",
            sources=[f"src/triattn/kernels/{name}.pyx"],
            include_dirs=[np.get_include()],
            libraries=["m", "mvec"] if extra else ["m"],
            # compile-only: linking with -ffast-math would pull in crtfastmath
            extra_compile_args=base_args + list(extra),
        )

    ext_modules = cythonize(
        [ext("_ckernels"), ext("_cadditive", "-ffast-math")],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
            "embedsignature": True,
        },
    )

setup(ext_modules=ext_modules)

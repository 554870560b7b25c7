import os
import platform

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup


def _compile_args():
    # Products and sums must stay separately rounded so the kernel matches the
    # reference left-to-right accumulation bit for bit.
    args = ["-O3", "-ffp-contract=off"]
    if os.environ.get("LATTICE_RNN_PORTABLE"):
        return args
    if platform.machine().lower() in ("x86_64", "amd64"):
        try:
            with open("/proc/cpuinfo") as fh:
                if " avx2" in fh.read():
                    args.append("-mavx2")
        except OSError:
            pass
    return args


extensions = [
    Extension(
        "lattice_rnn._kernels",
        ["src/lattice_rnn/_kernels.pyx"],
        include_dirs=[np.get_include(), "src/lattice_rnn"],
        extra_compile_args=_compile_args(),
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))

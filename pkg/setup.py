import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("PRESEL_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "presel._kernels._core",
                    ["src/presel/_kernels/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    # -ffp-contract=off: the neighbor-centrality kernel must
                    # reproduce plain sequential float64 arithmetic bit for bit,
                    # so FMA contraction is disabled.
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except Exception as exc:  # pragma: no cover - depends on build host
        print(f"warning: compiled kernels disabled, using pure-python fallback ({exc})")

setup(ext_modules=ext_modules)

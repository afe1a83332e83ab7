"""setuptools shim that builds the pybind11 extension with CMake.

The repository's CMake project is the single source of truth for compiler
flags and sources; this file only points setuptools at it and copies the
built module into the package.
"""

import shutil
import subprocess
import sys
from pathlib import Path

import pybind11
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name: str):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext: CMakeExtension) -> None:
        source_dir = Path(__file__).resolve().parent
        build_dir = Path(self.build_temp).resolve() / "cmake"
        build_dir.mkdir(parents=True, exist_ok=True)

        out_path = Path(self.get_ext_fullpath(ext.name)).resolve()
        out_path.parent.mkdir(parents=True, exist_ok=True)

        configure = [
            "cmake",
            "-S",
            str(source_dir),
            "-B",
            str(build_dir),
            "-DCMAKE_BUILD_TYPE=Release",
            "-DMNPE_BUILD_PYTHON=ON",
            "-DMNPE_BUILD_TESTS=OFF",
            f"-DPython3_EXECUTABLE={sys.executable}",
            f"-Dpybind11_DIR={pybind11.get_cmake_dir()}",
        ]
        subprocess.run(configure, check=True)
        subprocess.run(
            ["cmake", "--build", str(build_dir), "--target", "_mnpe", "--parallel"],
            check=True,
        )

        built = sorted(build_dir.glob("_mnpe*.so"))
        if not built:
            raise RuntimeError(f"CMake did not produce an _mnpe extension in {build_dir}")
        shutil.copy2(built[0], out_path)


setup(
    ext_modules=[CMakeExtension("mnpe._mnpe")],
    cmdclass={"build_ext": CMakeBuild},
)

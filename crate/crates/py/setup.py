"""Builds the Rust extension module with cargo.

maturin / setuptools-rust are not required: a plain build_ext step runs
`cargo build --release --features extension-module` and copies the
resulting shared library to wherever setuptools expects the extension.
"""

import json
import shutil
import subprocess
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

CRATE_DIR = Path(__file__).resolve().parent


class CargoExtension(Extension):
    def __init__(self, name: str):
        super().__init__(name, sources=[])


class CargoBuildExt(build_ext):
    def build_extension(self, ext: Extension) -> None:
        subprocess.check_call(
            ["cargo", "build", "--release", "--features", "extension-module"],
            cwd=CRATE_DIR,
        )
        meta = json.loads(
            subprocess.check_output(
                ["cargo", "metadata", "--format-version", "1", "--no-deps"],
                cwd=CRATE_DIR,
            )
        )
        built = Path(meta["target_directory"]) / "release" / "libwavevault_py.so"
        dest = Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(built, dest)


setup(
    ext_modules=[CargoExtension("wavevault_py")],
    cmdclass={"build_ext": CargoBuildExt},
)

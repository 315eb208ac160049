import os
import pathlib
import shutil

import pytest


@pytest.fixture
def cli():
    path = os.environ.get("MRISTAGE_CLI") or shutil.which("mristage")
    if not path:
        pytest.skip("mristage executable not available")
    return path


def write_tree(root: pathlib.Path, classes, per_class, salt):
    for name in classes:
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            (d / f"{name}_{i}.png").write_bytes(f"{salt}:{name}:{i}".encode())

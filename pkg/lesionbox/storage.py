from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import List, Union


def _ensure_parent_dir_exists(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


def write_bytes_atomic(path: Union[str, Path], data: Union[bytes, bytearray]) -> Path:
    """
    Write bytes to `path` via a temporary file in the same directory and a rename,
    so readers never see a partially written file.

    Returns the target path.
    """
    target = Path(path)
    _ensure_parent_dir_exists(target)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(bytes(data))
        # mkstemp creates 0600 files
        os.chmod(tmp_name, 0o644)
        os.replace(tmp_name, target)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return target


def write_text_atomic(path: Union[str, Path], text: str) -> Path:
    """UTF-8 text with `\\n` line endings, written atomically."""
    return write_bytes_atomic(path, text.encode("utf-8"))


def is_volume_path(path: Union[str, Path]) -> bool:
    name = Path(path).name
    return name.endswith(".nii") or name.endswith(".nii.gz")


def list_volume_files(directory: Union[str, Path]) -> List[Path]:
    """Return the .nii / .nii.gz files directly inside `directory`, sorted by name."""
    directory = Path(directory)
    if not directory.exists():
        return []
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and is_volume_path(p)
    )


def expand_inputs(paths: List[Union[str, Path]]) -> List[Path]:
    """Expand directory arguments into the volume files they contain; keep file arguments as given."""
    expanded: List[Path] = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            expanded.extend(list_volume_files(p))
        else:
            expanded.append(p)
    return expanded

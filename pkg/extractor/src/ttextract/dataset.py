"""Class-folder dataset enumeration.

Expected layout: one directory per class under the dataset root, image
files directly inside each class directory. Enumeration order is fully
deterministic (sorted class names, sorted file names) so a re-run over
the same tree yields identical feature files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import DatasetError

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp", ".webp")


@dataclass(frozen=True)
class ImageFolder:
    root: Path
    classes: tuple[str, ...]
    paths: tuple[Path, ...]
    labels: tuple[int, ...]

    @property
    def n_images(self) -> int:
        return len(self.paths)


def enumerate_imagefolder(root) -> ImageFolder:
    """Walk a class-folder tree into a deterministic image listing.

    Raises DatasetError when the root is missing, has fewer than two
    class directories, or any class directory holds no image files.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root is not a directory: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if len(class_dirs) < 2:
        raise DatasetError(
            f"dataset root {root} has {len(class_dirs)} class directories; "
            "need at least 2"
        )
    classes = tuple(p.name for p in class_dirs)
    paths: list[Path] = []
    labels: list[int] = []
    for idx, class_dir in enumerate(class_dirs):
        files = sorted(
            p
            for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not files:
            raise DatasetError(f"class directory has no image files: {class_dir}")
        paths.extend(files)
        labels.extend([idx] * len(files))
    return ImageFolder(
        root=root, classes=classes, paths=tuple(paths), labels=tuple(labels)
    )

import numpy as np
import pytest
from PIL import Image


def paint(path, base_color, seed):
    """Small RGB image with a class-specific base color plus seeded texture."""
    rng = np.random.default_rng(seed)
    pixels = np.clip(
        np.asarray(base_color, dtype=np.int32) + rng.integers(-40, 40, size=(24, 24, 3)),
        0, 255,
    ).astype(np.uint8)
    Image.fromarray(pixels, "RGB").save(path)


@pytest.fixture
def image_tree(tmp_path):
    """Two classes x three images plus the class-names file."""
    root = tmp_path / "images"
    colors = {"red-thing": (220, 30, 30), "blue-thing": (30, 30, 220)}
    for i, (name, color) in enumerate(colors.items()):
        class_dir = root / name
        class_dir.mkdir(parents=True)
        for j in range(3):
            paint(class_dir / f"img{j}.png", color, seed=i * 10 + j)
    classes = tmp_path / "classes.txt"
    classes.write_text("red-thing\nblue-thing\n")
    return root, classes

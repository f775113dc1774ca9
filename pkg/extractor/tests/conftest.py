import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from extract_testutil import save_mask, save_rgb  # noqa: E402


@pytest.fixture
def image_tree(tmp_path):
    """Two-split image directory plus masks for the test split."""
    images = tmp_path / "images"
    masks = tmp_path / "masks"
    (images / "train").mkdir(parents=True)
    (images / "test").mkdir()
    masks.mkdir()
    for i in range(2):
        save_rgb(images / "train" / f"img_{i}.png", 96, seed=i)
    for i in range(2):
        save_rgb(images / "test" / f"bad_{i}.png", 96, seed=10 + i)
        save_mask(masks / f"bad_{i}.png", 96, seed=20 + i)
    return images, masks

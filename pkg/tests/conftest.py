import json

import numpy as np
import pytest

from octpipe.eval_harness.phantom import random_phantom
from octpipe.volume_io import write_volume


@pytest.fixture
def make_dataset(tmp_path):
    """Factory: write a phantom dataset (images/, labels/, inventory.json)."""

    def build(
        dims=(96, 96, 4),
        vendors=("Cirrus", "Spectralis"),
        n_per_vendor=2,
        seed=20,
        n_blobs=4,
        close_radius=1,
    ):
        root = tmp_path / "data"
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "labels").mkdir(parents=True, exist_ok=True)
        inventory = {}
        counter = 0
        truths = {}
        for vendor in vendors:
            ids = []
            for i in range(n_per_vendor):
                vid = f"{vendor.lower()}_{i:02d}"
                vol, labels = random_phantom(
                    dims, seed=seed + counter, n_blobs=n_blobs,
                    close_radius=close_radius, volume_id=vid,
                )
                write_volume(vol, root / "images" / f"{vid}.mhd")
                write_volume(labels, root / "labels" / f"{vid}.mhd")
                truths[vid] = labels
                ids.append(vid)
                counter += 1
            inventory[vendor] = ids
        (root / "inventory.json").write_text(json.dumps(inventory, indent=2) + "\n")
        return root, inventory, truths

    return build


@pytest.fixture
def small_phantom():
    vol, labels = random_phantom((96, 96, 8), seed=31, n_blobs=5)
    assert set(np.unique(labels.voxels)) == {0, 1, 2, 3}
    return vol, labels

import numpy as np
import pytest

from morphrefine.fixtures import make_scene, write_scene

SMALL_SCALES = [16, 32, 64, 128]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_disk():
    """128x128 disk with a 16x16 corrupted estimate."""
    return make_scene("disk", size=128, lowres_size=16)


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory, small_disk):
    root = tmp_path_factory.mktemp("dataset")
    write_scene(small_disk, root, SMALL_SCALES)
    return root

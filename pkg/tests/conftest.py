import sys

import numpy as np
import pytest
from PIL                        import Image

import settings
from classifiers.toy_model      import ToyModel, binary_linear_spec, save_toy_model
from utils                      import set_csv_rows, set_json_data

# The reference server is started as "python -m classifiers.model_server" from here
SERVER_COMMAND = [sys.executable, "-m", "classifiers.model_server"]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def write_png(tmp_path):
    """Writes a uint8 array as a PNG file and returns its path."""

    def _write_png(data, name="img.png", mode=None):
        path = str(tmp_path / name)
        image = Image.fromarray(np.asarray(data, dtype=np.uint8))
        if mode is not None:
            image = image.convert(mode)
        image.save(path, format="PNG")
        return path

    return _write_png


@pytest.fixture
def binary_model():
    """Builds a 2-class linear toy model from a logit difference field."""

    def _binary_model(field, shape):
        return ToyModel(binary_linear_spec(field, shape))

    return _binary_model


@pytest.fixture
def server_command():
    def _server_command(*args):
        return SERVER_COMMAND + [str(arg) for arg in args]

    return _server_command


@pytest.fixture
def server_cwd():
    return settings.BASE_DIR


@pytest.fixture
def make_dataset(tmp_path, write_png):
    """
        Writes ``images`` (uint8 arrays) with ``labels``, a toy model and a
        version 1 config into ``tmp_path`` and returns the config path.
    """

    def _make_dataset(images, labels, spec, **overrides):
        rows = []
        for idx, img in enumerate(images):
            name = f"img{idx}.png"
            write_png(img, name)
            rows.append((name, labels[idx]))
        set_csv_rows(str(tmp_path / "manifest.csv"), ("path", "label"), rows)
        save_toy_model(spec, str(tmp_path / "model.bin"))

        config = {
            "version": 1,
            "attack": "superpixel",
            "dataset": "manifest.csv",
            "model": {"toy": "model.bin"},
            "epsilon": 0.1,
            "iterations": 50,
            "checkpoints": [10, 50],
            "output_dir": "out",
        }
        config.update(overrides)
        path = str(tmp_path / "config.json")
        set_json_data(path, config)
        return path

    return _make_dataset


def _is_four_connected(mask):
    """Flood-fill check that the True pixels of ``mask`` form one 4-connected region."""

    pixels = list(zip(*np.nonzero(mask)))
    if not pixels:
        return True

    seen = {pixels[0]}
    stack = [pixels[0]]
    while stack:
        r, c = stack.pop()
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if (0 <= nr < mask.shape[0] and 0 <= nc < mask.shape[1] and mask[nr, nc]
                    and (nr, nc) not in seen):
                seen.add((nr, nc))
                stack.append((nr, nc))

    return len(seen) == len(pixels)


@pytest.fixture
def four_connected():
    return _is_four_connected

"""
    Synthetic desk-scale datasets: smooth multi-region color images, a toy MLP
    labelling them and a ready-to-run configuration.
"""

import logging
from os                         import makedirs
from os.path                    import join

import numpy as np

from classifiers.toy_model      import random_mlp_spec, save_toy_model
from imgcore                    import save_png
from utils                      import get_json_data, get_json_path, set_csv_rows, set_json_data

logger = logging.getLogger(__name__)

# Share of images whose manifest label is not the model's clean prediction
MISLABELLED_SHARE = 0.05


def synthetic_image(size, rng, regions=None, noise=0.02):
    """
        Return a ``size x size`` RGB image made of a few flat color regions (a
        Voronoi partition of random sites) with soft noise on top.
    """

    if regions is None:
        regions = int(rng.integers(3, 8))

    sites = rng.uniform(0, size, size=(regions, 2))
    colors = rng.uniform(0.1, 0.9, size=(regions, 3))
    rows, cols = np.mgrid[0:size, 0:size] + 0.5
    distances = (rows[..., None] - sites[:, 0]) ** 2 + (cols[..., None] - sites[:, 1]) ** 2
    img = colors[np.argmin(distances, axis=-1)]
    img = img + rng.normal(0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)

def make_fixtures(out_dir, count=100, size=32, classes=10, seed=0, hidden=(32,)):
    """
        Write ``count`` PNG images, ``manifest.csv``, ``model.bin`` and
        ``config.json`` into ``out_dir``. Labels are the model's own clean
        predictions except for a small share, which keeps clean accuracy high
        while leaving a few clean failures. The output only depends on the
        arguments.

        Returns
        -------
        config_path: :class:`str`
            the path of the written configuration.
    """

    rng = np.random.default_rng(seed)
    makedirs(join(out_dir, "images"), exist_ok=True)

    spec = random_mlp_spec((size, size, 3), hidden, classes, rng, scale=2.0)
    save_toy_model(spec, join(out_dir, "model.bin"))

    rows = []
    for idx in range(count):
        img = synthetic_image(size, rng)
        rel_path = join("images", f"{idx:04d}.png")
        save_png(img, join(out_dir, rel_path))

        # Predict on the 8-bit image that was actually written
        stored = np.round(img * 255) / 255
        label = int(np.argmax(spec.forward(stored))) + 1
        if rng.random() < MISLABELLED_SHARE:
            label = (label - 1 + int(rng.integers(1, classes))) % classes + 1
        rows.append((rel_path, label))

    set_csv_rows(join(out_dir, "manifest.csv"), ("path", "label"), rows)

    config = get_json_data(get_json_path("default_config"))
    config.update({
        "dataset": "manifest.csv",
        "model": {"toy": "model.bin"},
        "output_dir": "results",
    })
    config_path = join(out_dir, "config.json")
    set_json_data(config_path, config)

    logger.info(f"Wrote {count} {size}x{size} images, Y={classes}, to {out_dir}")
    return config_path
